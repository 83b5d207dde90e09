import math

import numpy as np
import pytest

from wordgan import tensor as T
from wordgan.lstm import init_lstm, lstm_unroll
from wordgan.nets import (
    PROB_EPS,
    discriminator_forward,
    discriminator_objective,
    generate_sequence,
    generator_forward,
    generator_objective,
    init_discriminator,
    init_generator,
    nonsaturating_generator_loss,
    word_weights,
)
from wordgan.tensor import Tensor, finite_diff_check
from wordgan.text import WordEmbeddingTable

LN_HALF = math.log(0.5)


def zeroed(ps):
    for t in ps.params.values():
        t.data[...] = 0.0
    return ps


def test_generator_layers_and_channels():
    gp = init_generator(16, image_extent=64, base_channels=8)
    assert gp.num_layers == 4
    assert gp.layer_channels() == [64, 32, 16, 8, 3]
    assert gp["deconv3_W"].shape == (8, 3, 4, 4)
    assert init_generator(8, image_extent=8, base_channels=4).num_layers == 1
    for bad in (4, 12, 512):
        with pytest.raises(ValueError):
            init_generator(8, image_extent=bad)


def test_generator_output_shape_and_range():
    gp = init_generator(8, image_extent=16, base_channels=4, seed=1)
    h = np.random.default_rng(0).normal(scale=50.0, size=(3, 8))
    for train in (False, True):
        img = generator_forward(gp, h, train=train).data
        assert img.shape == (3, 3, 16, 16)
        assert np.all(np.abs(img) <= 1.0)
    with pytest.raises(ValueError):
        generator_forward(gp, np.ones((3, 7)))


def test_generator_zero_params_give_zero_image():
    gp = zeroed(init_generator(8, image_extent=8, base_channels=4))
    np.testing.assert_array_equal(generator_forward(gp, np.ones((2, 8))).data, 0.0)


def test_discriminator_zero_params_and_range():
    dp = zeroed(init_discriminator(8, base_channels=4, condition_dim=8))
    imgs = np.random.default_rng(0).uniform(-1, 1, (4, 3, 8, 8))
    np.testing.assert_array_equal(discriminator_forward(dp, imgs, np.ones(8)).data, 0.5)
    dp = init_discriminator(16, base_channels=4, condition_dim=5, seed=3)
    p = discriminator_forward(dp, np.random.default_rng(1).uniform(-1, 1, (6, 3, 16, 16)),
                              np.random.default_rng(2).normal(size=(6, 5)), train=True).data
    assert p.shape == (6,) and np.all((p > 0) & (p < 1))


def test_discriminator_condition_changes_output():
    rng = np.random.default_rng(5)
    for seed in range(3):
        dp = init_discriminator(8, base_channels=4, condition_dim=8, seed=seed)
        for t in dp.params.values():
            t.data[...] = rng.normal(scale=0.5, size=t.shape)
        img = rng.uniform(-1, 1, (1, 3, 8, 8))
        a = discriminator_forward(dp, img, rng.normal(size=8)).data
        b = discriminator_forward(dp, img, rng.normal(size=8)).data
        assert not np.array_equal(a, b)


def test_discriminator_input_validation():
    dp = init_discriminator(8, base_channels=4, condition_dim=8)
    with pytest.raises(ValueError):
        discriminator_forward(dp, np.zeros((2, 3, 16, 16)), np.zeros(8))
    with pytest.raises(ValueError):
        discriminator_forward(dp, np.zeros((2, 3, 8, 8)), np.zeros(7))
    with pytest.raises(ValueError):
        discriminator_forward(dp, np.zeros((2, 3, 8, 8)), np.zeros((3, 8)))


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def test_objective_anchors():
    half = np.full(4, 0.5)
    for n in (1, 3, 8):
        v = discriminator_objective(half, np.full((n, 4), 0.5), half).item()
        assert v == pytest.approx(3 * LN_HALF, abs=1e-15)
        assert generator_objective(np.full((n, 4), 0.5)).item() == pytest.approx(LN_HALF, abs=1e-15)
    assert round(3 * LN_HALF, 5) == -2.07944 and round(LN_HALF, 5) == -0.69315
    two = generator_objective(np.array([[0.25], [0.75]])).item()
    assert two == pytest.approx((math.log(0.75) + math.log(0.25)) / 2, abs=1e-15)
    assert round(two, 5) == -0.83699


def test_objective_supremum_and_clamp():
    v = discriminator_objective(np.ones(2), np.zeros((3, 2)), np.zeros(2)).item()
    assert v == pytest.approx(3 * math.log(1 - PROB_EPS), abs=1e-15)
    assert abs(v) < 1e-6
    g = generator_objective(np.ones((2, 2))).item()
    assert g == pytest.approx(math.log(PROB_EPS), rel=1e-9)


def direct_d(real, fake, mis):
    n, m = fake.shape
    total = 0.0
    for i in range(m):
        s = sum(math.log(1 - fake[t][i]) for t in range(n)) / n
        total += math.log(real[i]) + s + math.log(1 - mis[i])
    return total / m


def direct_g(fake, lengths=None):
    n, m = fake.shape
    total = 0.0
    for i in range(m):
        k = n if lengths is None else lengths[i]
        total += sum(math.log(1 - fake[t][i]) for t in range(k)) / k
    return total / m


def test_objectives_match_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, m = rng.integers(1, 9), rng.integers(1, 17)
        real, mis = rng.uniform(0.01, 0.99, m), rng.uniform(0.01, 0.99, m)
        fake = rng.uniform(0.01, 0.99, (n, m))
        assert abs(discriminator_objective(real, fake, mis).item() - direct_d(real, fake, mis)) < 1e-12
        assert abs(generator_objective(fake).item() - direct_g(fake)) < 1e-12
        as_list = discriminator_objective(real, [Tensor(r) for r in fake], mis).item()
        assert abs(as_list - direct_d(real, fake, mis)) < 1e-12


def test_variable_length_weights():
    rng = np.random.default_rng(1)
    fake = rng.uniform(0.05, 0.95, (4, 3))
    lengths = np.array([4, 2, 1])
    assert abs(generator_objective(fake, lengths).item() - direct_g(fake, lengths)) < 1e-12
    np.testing.assert_allclose(word_weights(4, lengths).sum(axis=0), 1.0)
    with pytest.raises(ValueError):
        word_weights(2, [3])


def test_nonsaturating_loss():
    assert nonsaturating_generator_loss(np.full((3, 2), 0.5)).item() == pytest.approx(-LN_HALF, abs=1e-15)
    rng = np.random.default_rng(4)
    fake = rng.uniform(0.01, 0.99, (4, 5))
    direct = -np.mean([[math.log(fake[t, i]) for t in range(4)] for i in range(5)])
    assert abs(nonsaturating_generator_loss(fake).item() - direct) < 1e-12
    # both surrogates fall as the discriminator is fooled more often
    p = Tensor(fake, requires_grad=True)
    T.backward(nonsaturating_generator_loss(p))
    ns_grad = p.grad.copy()
    q = Tensor(fake, requires_grad=True)
    T.backward(generator_objective(q))
    assert np.all(ns_grad < 0) and np.all(q.grad < 0)


def test_discriminator_objective_grid_maximum():
    grid = np.linspace(PROB_EPS, 1 - PROB_EPS, 21)
    best = max(((discriminator_objective([r], [[f]], [q]).item(), r, f, q)
                for r in grid for f in grid for q in grid))
    assert best[1:] == (grid[-1], grid[0], grid[0])


# ---------------------------------------------------------------------------
# gradients on the tiny model
# ---------------------------------------------------------------------------

E, Z, TDIM, EXT, BASE, N_WORDS, M = 8, 8, 8, 8, 4, 3, 4


@pytest.fixture(scope="module")
def tiny():
    rng = np.random.default_rng(42)
    lp = init_lstm(E, Z, seed=1, init_scale=0.3)
    gp = init_generator(Z, EXT, 3, BASE, seed=2)
    dp = init_discriminator(EXT, 3, BASE, TDIM, seed=3)
    for ps in (gp, dp):  # larger weights keep gradients well above rounding noise
        for k, t in ps.params.items():
            if k.endswith("_W"):
                t.data *= 10.0
    words = rng.normal(size=(N_WORDS, M, E))
    y = rng.normal(size=(M, TDIM))
    real = rng.uniform(-1, 1, (M, 3, EXT, EXT))
    mis = rng.uniform(-1, 1, (M, 3, EXT, EXT))
    return lp, gp, dp, words, y, real, mis


def _swap(ps, name, fn):
    def f(w):
        saved = ps.params[name]
        ps.params[name] = w
        try:
            return fn()
        finally:
            ps.params[name] = saved
    return f


def _g_objective(lp, gp, dp, words, y):
    hs = lstm_unroll(lp, [Tensor(w) for w in words])
    imgs = generator_forward(gp, T.concat(hs, axis=0), train=True)
    p = discriminator_forward(dp, imgs, np.tile(y, (N_WORDS, 1)), train=True)
    return generator_objective(p.reshape(N_WORDS, M))


def _d_objective(lp, gp, dp, words, y, real, mis, fakes):
    p_real = discriminator_forward(dp, real, y, train=True)
    p_fake = discriminator_forward(dp, fakes, np.tile(y, (N_WORDS, 1)), train=True)
    p_mis = discriminator_forward(dp, mis, y, train=True)
    return discriminator_objective(p_real, p_fake.reshape(N_WORDS, M), p_mis)


@pytest.mark.parametrize("name", ["conv0_W", "cond_W", "cond_b", "joint_W", "joint_bn_gamma",
                                  "joint_bn_beta", "dense_W", "dense_b"])
def test_discriminator_objective_gradients(tiny, name):
    lp, gp, dp, words, y, real, mis = tiny
    with T.no_grad():
        hs = lstm_unroll(lp, [Tensor(w) for w in words])
        fakes = generator_forward(gp, T.concat(hs, axis=0), train=True).data
    f = _swap(dp, name, lambda: _d_objective(lp, gp, dp, words, y, real, mis, fakes))
    assert finite_diff_check(f, dp[name].data) < 1e-4


@pytest.mark.parametrize("which,name", [("gen", "proj_W"), ("gen", "proj_bn_gamma"), ("gen", "deconv0_W"),
                                        ("gen", "out_b"), ("lstm", "W_xi"), ("lstm", "W_hf"),
                                        ("lstm", "b_c")])
def test_generator_objective_gradients(tiny, which, name):
    lp, gp, dp, words, y, _, _ = tiny
    ps = gp if which == "gen" else lp
    f = _swap(ps, name, lambda: _g_objective(lp, gp, dp, words, y))
    assert finite_diff_check(f, ps[name].data) < 1e-4


def test_generator_objective_gradient_wrt_images(tiny):
    _, _, dp, _, y, real, _ = tiny

    def f(img):
        return generator_objective(discriminator_forward(dp, img, y, train=True).reshape(1, M))

    assert finite_diff_check(f, real) < 1e-4


# ---------------------------------------------------------------------------
# per-word generation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_models():
    lp = init_lstm(6, 8, seed=4)
    gp = init_generator(8, image_extent=16, base_channels=4, seed=5)
    for name in gp.buffers:  # non-trivial running stats for eval mode
        gp.buffers[name] += 0.1 if name.endswith("_mean") else 0.5
    return lp, gp, WordEmbeddingTable(6, {}, oov_seed=3)


def test_generate_sequence_shapes_and_determinism(small_models):
    lp, gp, table = small_models
    sent = "a red circle of large size on white"
    a = generate_sequence(lp, gp, table, sent)
    b = generate_sequence(lp, gp, table, sent)
    assert len(a) == 8 and all(x.shape == (3, 16, 16) for x in a)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    with pytest.raises(ValueError):
        generate_sequence(lp, gp, table, " .. ")


def test_prefix_consistency(small_models):
    lp, gp, table = small_models
    vocab = ["one", "red", "blue", "small", "large", "circle", "square", "on", "a", "white"]
    rng = np.random.default_rng(8)
    for _ in range(20):
        words = list(rng.choice(vocab, size=rng.integers(2, 9)))
        full = generate_sequence(lp, gp, table, words)
        k = int(rng.integers(1, len(words) + 1))
        prefix = generate_sequence(lp, gp, table, words[:k])
        for j in range(k):
            assert full[j].tobytes() == prefix[j].tobytes()

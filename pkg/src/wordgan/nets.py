"""Deconvolution generator, conditioned discriminator and the adversarial objectives.

Topology follows the usual deep-convolutional GAN layout: 4x4 kernels with
stride 2, batch norm everywhere except the generator output and the first
discriminator layer, ReLU in the generator, leaky ReLU (0.2) in the
discriminator.  The sentence condition enters the discriminator at the 4x4
feature map, projected, replicated spatially and concatenated on channels.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .lstm import LstmParams, lstm_unroll
from .params import ParamSet
from .tensor import Tensor, no_grad
from .text import WordEmbeddingTable, embed_words, tokenize

PROB_EPS = 1e-7
LEAK = 0.2
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _num_layers(extent: int) -> int:
    if extent < 8 or extent > 256 or extent & (extent - 1):
        raise ValueError(f"unsupported image extent {extent}: need a power of two in [8, 256]")
    return int(np.log2(extent // 4))


def _bn(ps: ParamSet, name: str, x: Tensor, train: bool, update_stats: bool) -> Tensor:
    return T.batch_norm(
        x, ps[f"{name}_gamma"], ps[f"{name}_beta"],
        mode="train" if train else "eval",
        running_mean=ps.buffers[f"{name}_mean"], running_var=ps.buffers[f"{name}_var"],
        momentum=BN_MOMENTUM, epsilon=BN_EPS, update_stats=update_stats,
    )


def _add_bn(arrays: dict, buffers: dict, name: str, channels: int) -> None:
    arrays[f"{name}_gamma"] = np.ones(channels)
    arrays[f"{name}_beta"] = np.zeros(channels)
    buffers[f"{name}_mean"] = np.zeros(channels)
    buffers[f"{name}_var"] = np.ones(channels)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

class GeneratorParams(ParamSet):
    kind = "generator"

    @property
    def num_layers(self) -> int:
        return _num_layers(self.meta["image_extent"])

    def layer_channels(self) -> list[int]:
        n = self.num_layers
        base = self.meta["base_channels"]
        return [base * 2 ** (n - 1 - l) for l in range(n)] + [self.meta["channels"]]


def init_generator(z_dim: int, image_extent: int = 64, channels: int = 3,
                   base_channels: int = 64, seed: int = 0, dtype=np.float64) -> GeneratorParams:
    if z_dim <= 0 or channels <= 0 or base_channels <= 0:
        raise ValueError("generator dimensions must be positive")
    n = _num_layers(image_extent)
    chans = [base_channels * 2 ** (n - 1 - l) for l in range(n)] + [channels]
    rng = np.random.default_rng(seed)
    arrays, buffers = {}, {}
    arrays["proj_W"] = rng.normal(0.0, 0.02, (z_dim, chans[0] * 16))
    _add_bn(arrays, buffers, "proj_bn", chans[0])
    for l in range(n):
        arrays[f"deconv{l}_W"] = rng.normal(0.0, 0.02, (chans[l], chans[l + 1], 4, 4))
        if l < n - 1:
            _add_bn(arrays, buffers, f"bn{l}", chans[l + 1])
    arrays["out_b"] = np.zeros(channels)
    arrays = {k: v.astype(dtype) for k, v in arrays.items()}
    buffers = {k: v.astype(dtype) for k, v in buffers.items()}
    return GeneratorParams(arrays, buffers, z_dim=z_dim, image_extent=image_extent,
                           channels=channels, base_channels=base_channels)


def generator_forward(gp: GeneratorParams, h, train: bool = False,
                      update_stats: bool = False) -> Tensor:
    """Map features ``h`` [N, Z] to images [N, C, extent, extent] in (-1, 1)."""
    h = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=gp.dtype))
    z = gp.meta["z_dim"]
    if h.ndim != 2 or h.shape[1] != z:
        raise ValueError(f"generator expects [N, {z}] features, got {h.shape}")
    chans = gp.layer_channels()
    n = gp.num_layers
    x = T.matmul(h, gp["proj_W"]).reshape(h.shape[0], chans[0], 4, 4)
    x = T.relu(_bn(gp, "proj_bn", x, train, update_stats))
    for l in range(n):
        last = l == n - 1
        x = T.conv_transpose2d(x, gp[f"deconv{l}_W"], stride=2, padding=1,
                               bias=gp["out_b"] if last else None)
        if not last:
            x = T.relu(_bn(gp, f"bn{l}", x, train, update_stats))
    return T.tanh(x)


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

class DiscriminatorParams(ParamSet):
    kind = "discriminator"

    @property
    def num_layers(self) -> int:
        return _num_layers(self.meta["image_extent"])


def init_discriminator(image_extent: int = 64, channels: int = 3, base_channels: int = 64,
                       condition_dim: int = 64, seed: int = 0, cond_channels: int = 16,
                       dtype=np.float64) -> DiscriminatorParams:
    if condition_dim <= 0 or cond_channels <= 0 or base_channels <= 0:
        raise ValueError("discriminator dimensions must be positive")
    n = _num_layers(image_extent)
    rng = np.random.default_rng(seed)
    arrays, buffers = {}, {}
    prev = channels
    for l in range(n):
        out = base_channels * 2 ** l
        arrays[f"conv{l}_W"] = rng.normal(0.0, 0.02, (out, prev, 4, 4))
        if l > 0:
            _add_bn(arrays, buffers, f"bn{l}", out)
        prev = out
    arrays["cond_W"] = rng.normal(0.0, 0.02, (condition_dim, cond_channels))
    arrays["cond_b"] = np.zeros(cond_channels)
    arrays["joint_W"] = rng.normal(0.0, 0.02, (prev, prev + cond_channels, 1, 1))
    _add_bn(arrays, buffers, "joint_bn", prev)
    arrays["dense_W"] = rng.normal(0.0, 0.02, (prev * 16, 1))
    arrays["dense_b"] = np.zeros(1)
    arrays = {k: v.astype(dtype) for k, v in arrays.items()}
    buffers = {k: v.astype(dtype) for k, v in buffers.items()}
    return DiscriminatorParams(arrays, buffers, image_extent=image_extent, channels=channels,
                               base_channels=base_channels, condition_dim=condition_dim,
                               cond_channels=cond_channels)


def discriminator_features(dp: DiscriminatorParams, images, train: bool = False,
                           update_stats: bool = False) -> list:
    """Activations after every strided convolution; the last one is 4x4."""
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=dp.dtype))
    e, c = dp.meta["image_extent"], dp.meta["channels"]
    if x.ndim != 4 or x.shape[1:] != (c, e, e):
        raise ValueError(f"discriminator expects [N, {c}, {e}, {e}] images, got {x.shape}")
    feats = []
    for l in range(dp.num_layers):
        x = T.conv2d(x, dp[f"conv{l}_W"], stride=2, padding=1)
        if l > 0:
            x = _bn(dp, f"bn{l}", x, train, update_stats)
        x = T.leaky_relu(x, LEAK)
        feats.append(x)
    return feats


def discriminator_forward(dp: DiscriminatorParams, images, y, train: bool = False,
                          update_stats: bool = False) -> Tensor:
    """Probability [N] that each image is real and matches its condition row of ``y``."""
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=dp.dtype))
    if y.ndim == 1:
        y = y.reshape(1, -1)
    t_dim = dp.meta["condition_dim"]
    feat = discriminator_features(dp, images, train, update_stats)[-1]
    n = feat.shape[0]
    if y.shape[1] != t_dim:
        raise ValueError(f"condition width {y.shape[1]} != {t_dim}")
    if y.shape[0] != n:
        if y.shape[0] != 1:
            raise ValueError(f"{y.shape[0]} conditions for {n} images")
        y = Tensor(np.repeat(y.data, n, axis=0)) if not y.requires_grad else T.concat([y] * n, axis=0)
    cond = T.leaky_relu(T.matmul(y, dp["cond_W"]) + dp["cond_b"], LEAK)
    x = T.concat([feat, T.spatial_tile(cond, 4, 4)], axis=1)
    x = T.conv2d(x, dp["joint_W"])
    x = T.leaky_relu(_bn(dp, "joint_bn", x, train, update_stats), LEAK)
    logit = T.matmul(x.reshape(n, -1), dp["dense_W"]) + dp["dense_b"]
    return T.sigmoid(logit.reshape(n))


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _prob(p) -> Tensor:
    if isinstance(p, (list, tuple)):
        p = T.concat([q.reshape(1, -1) if isinstance(q, Tensor) else Tensor(np.asarray(q).reshape(1, -1))
                      for q in p], axis=0)
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    return T.clamp(p, PROB_EPS, 1.0 - PROB_EPS)


def word_weights(n: int, lengths=None, dtype=np.float64) -> np.ndarray:
    """[n, m] weights 1/n_i on the first n_i words of record i, zero after."""
    if lengths is None:
        return None
    lengths = np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > n):
        raise ValueError("sentence lengths must lie in [1, n]")
    steps = np.arange(n)[:, None]
    return ((steps < lengths[None, :]) / lengths[None, :]).astype(dtype)


def _per_word_term(d_fake, lengths, term=lambda p: T.log(1.0 - p)) -> Tensor:
    """Mean over records of (1/n_i) * sum_t term(d_fake[t, i]); term defaults to log(1 - p)."""
    fake = _prob(d_fake)
    if fake.ndim == 1:
        fake = fake.reshape(1, -1)
    n, m = fake.shape
    logs = term(fake)
    w = word_weights(n, lengths, dtype=fake.dtype)
    if w is None:
        return T.mean(logs)  # (1/m) sum_i (1/n) sum_t
    return T.sum(logs * w) * (1.0 / m)


def discriminator_objective(d_real, d_fake, d_mismatch, lengths=None) -> Tensor:
    """mean_i[ log D(r|y) + (1/n) sum_t log(1 - D(G(h_t)|y)) + log(1 - D(r*|y)) ].

    ``d_fake`` is [n, m] (word-major) or a list of n per-word [m] vectors.
    The discriminator ascends this value.
    """
    real = _prob(d_real).reshape(-1)
    mis = _prob(d_mismatch).reshape(-1)
    fake_term = _per_word_term(d_fake, lengths)
    if real.shape != mis.shape:
        raise ValueError("real and mismatch probabilities must have the same length")
    return T.mean(T.log(real)) + fake_term + T.mean(T.log(1.0 - mis))


def generator_objective(d_fake, lengths=None) -> Tensor:
    """mean_i (1/n) sum_t log(1 - D(G(h_t)|y)); generator and LSTM descend this."""
    return _per_word_term(d_fake, lengths)


def nonsaturating_generator_loss(d_fake, lengths=None) -> Tensor:
    """mean_i (1/n) sum_t -log D(G(h_t)|y).

    Shares its minimizer with :func:`generator_objective` but keeps a usable
    gradient when the discriminator confidently rejects the fakes.
    """
    return _per_word_term(d_fake, lengths, term=lambda p: -T.log(p))


# ---------------------------------------------------------------------------
# per-word generation
# ---------------------------------------------------------------------------

def generate_sequence(lstm_params: LstmParams, gp: GeneratorParams, table: WordEmbeddingTable,
                      sentence) -> list[np.ndarray]:
    """One image per word: image k depends only on words 1..k.

    Each word's image is rendered on its own with eval-mode batch norm, so the
    arithmetic for image k is identical whatever follows word k.
    """
    tokens = tokenize(sentence) if isinstance(sentence, str) else list(sentence)
    if not tokens:
        raise ValueError("sentence has no words")
    xs = [Tensor(v.astype(lstm_params.dtype).reshape(1, -1)) for v in embed_words(table, tokens)]
    with no_grad():
        hs = lstm_unroll(lstm_params, xs)
        return [generator_forward(gp, h, train=False).data[0] for h in hs]

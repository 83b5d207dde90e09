"""Minibatch adversarial training with per-word generator losses.

One iteration = ``disc_steps`` discriminator ascent steps followed by one
joint descent step for the generator and the LSTM.  Fake images are
regenerated from the current generator inside every discriminator step.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .lstm import LstmParams, init_lstm, lstm_unroll
from .nets import (
    DiscriminatorParams,
    GeneratorParams,
    discriminator_forward,
    discriminator_objective,
    generator_forward,
    generator_objective,
    nonsaturating_generator_loss,
    init_discriminator,
    init_generator,
)
from .params import ParamSet
from .tensor import Tensor, no_grad
from .text import CaptionedImage, TextEncoder, tokenize

log = logging.getLogger(__name__)

# Surrogate whose gradient the generator and LSTM follow.  Either way the
# reported generator objective is the mean of log(1 - D(G(h_t)|y)).
GENERATOR_LOSSES = {"minimax": generator_objective, "nonsaturating": nonsaturating_generator_loss}


@dataclass
class TrainingConfig:
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 600
    disc_steps: int = 2
    image_extent: int = 64
    channels: int = 3
    z_dim: int = 128
    embedding_dim: int = 64
    g_base_channels: int = 64
    d_base_channels: int = 64
    cond_channels: int = 16
    lstm_init_scale: float = 0.08
    seed: int = 0
    checkpoint_interval: int = 1
    max_iterations: int = 0  # 0 = no cap beyond epochs
    precision: str = "float64"
    generator_loss: str = "minimax"  # or "nonsaturating"
    instance_noise: float = 0.0  # std of Gaussian noise on every image the discriminator sees

    def validate(self) -> None:
        for name in ("learning_rate", "beta1", "adam_epsilon", "lstm_init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.beta2 < 1 or not self.beta1 < 1:
            raise ValueError("Adam betas must lie in (0, 1)")
        for name in ("batch_size", "epochs", "disc_steps", "channels", "z_dim", "embedding_dim",
                     "g_base_channels", "d_base_channels", "cond_channels", "checkpoint_interval"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm)")
        if not self.instance_noise >= 0:
            raise ValueError("instance_noise must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        e = self.image_extent
        if e < 8 or e > 256 or e & (e - 1):
            raise ValueError(f"image_extent {e} must be a power of two in [8, 256]")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if self.generator_loss not in GENERATOR_LOSSES:
            raise ValueError(f"generator_loss must be one of {sorted(GENERATOR_LOSSES)}")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads: dict, state: AdamState, direction: str = "descend") -> None:
    """Bias-corrected Adam update applied in place; ``direction`` picks the sign."""
    if direction not in ("ascend", "descend"):
        raise ValueError(f"direction must be ascend or descend, not {direction!r}")
    arrays = params.arrays() if isinstance(params, ParamSet) else params
    for name, p in arrays.items():
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {grads[name].shape}, parameter {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    sign = 1.0 if direction == "ascend" else -1.0
    for name, p in arrays.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p += (sign * state.lr) * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# models and batches
# ---------------------------------------------------------------------------

@dataclass
class Models:
    lstm: LstmParams
    gen: GeneratorParams
    disc: DiscriminatorParams
    encoder: TextEncoder


def build_models(config: TrainingConfig, encoder: TextEncoder) -> Models:
    config.validate()
    if encoder.embedding_dim != config.embedding_dim:
        raise ValueError(
            f"embeddings have dimension {encoder.embedding_dim}, config says {config.embedding_dim}"
        )
    dt = config.dtype
    s = config.seed
    lstm = init_lstm(config.embedding_dim, config.z_dim, seed=s + 1,
                     init_scale=config.lstm_init_scale, dtype=dt)
    gen = init_generator(config.z_dim, config.image_extent, config.channels,
                         config.g_base_channels, seed=s + 2, dtype=dt)
    disc = init_discriminator(config.image_extent, config.channels, config.d_base_channels,
                              encoder.condition_dim, seed=s + 3,
                              cond_channels=config.cond_channels, dtype=dt)
    return Models(lstm, gen, disc, encoder)


def new_adam_states(config: TrainingConfig) -> dict:
    mk = lambda: AdamState(config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)  # noqa: E731
    return {"disc": mk(), "gen": mk(), "lstm": mk()}


@dataclass
class Batch:
    real: np.ndarray          # m x C x H x W
    mismatch: np.ndarray      # m x C x H x W, r* for each record
    tokens: list
    words: np.ndarray         # n x m x E, zero-padded past each sentence
    lengths: np.ndarray       # m
    y: np.ndarray             # m x T
    indices: np.ndarray
    mismatch_indices: np.ndarray

    @property
    def size(self) -> int:
        return self.real.shape[0]

    @property
    def num_words(self) -> int:
        return self.words.shape[0]


def _class_ids(dataset: Sequence[CaptionedImage]) -> np.ndarray:
    return np.array([r.class_id for r in dataset])


def sample_batch(dataset: Sequence[CaptionedImage], m: int, rng: np.random.Generator,
                 encoder: TextEncoder, indices=None, dtype=np.float64) -> Batch:
    """Draw m records, one caption each, and a mismatched real image r* per record."""
    classes = _class_ids(dataset)
    if len(np.unique(classes)) < 2:
        raise ValueError("dataset has a single class; mismatched pairs are impossible")
    if indices is None:
        indices = rng.choice(len(dataset), size=m, replace=len(dataset) < m)
    indices = np.asarray(indices)
    tokens, caption_ids, mis = [], [], []
    for i in indices:
        rec = dataset[i]
        k = int(rng.integers(len(rec.captions)))
        toks = tokenize(rec.captions[k])
        if not toks:
            raise ValueError(f"record {rec.record_id!r} caption {k} has no words")
        tokens.append(toks)
        caption_ids.append(rec.caption_id(k))
        others = np.flatnonzero(classes != rec.class_id)
        mis.append(int(others[rng.integers(len(others))]))
    mis = np.asarray(mis)
    lengths = np.array([len(t) for t in tokens])
    n = int(lengths.max())
    words = np.zeros((n, len(indices), encoder.embedding_dim))
    for j, toks in enumerate(tokens):
        words[:len(toks), j] = encoder.words(toks)
    y = np.stack([encoder.condition(t, cid) for t, cid in zip(tokens, caption_ids)])
    return Batch(
        real=np.stack([dataset[i].image for i in indices]).astype(dtype),
        mismatch=np.stack([dataset[i].image for i in mis]).astype(dtype),
        tokens=tokens,
        words=words.astype(dtype),
        lengths=lengths,
        y=y.astype(dtype),
        indices=indices,
        mismatch_indices=mis,
    )


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------

def _lengths_or_none(batch: Batch):
    return None if np.all(batch.lengths == batch.num_words) else batch.lengths


def fake_images(models: Models, batch: Batch, update_stats: bool) -> Tensor:
    """Word-major generator output [n*m, C, H, W]: rows t*m .. t*m+m-1 are word t."""
    xs = [Tensor(batch.words[t]) for t in range(batch.num_words)]
    hs = lstm_unroll(models.lstm, xs)
    return generator_forward(models.gen, T.concat(hs, axis=0), train=True, update_stats=update_stats)


def discriminator_loss(models: Models, batch: Batch, fakes: np.ndarray,
                       update_stats: bool = True) -> Tensor:
    """Three-term discriminator objective on a batch with precomputed fakes."""
    dp = models.disc
    n, m = batch.num_words, batch.size
    p_real = discriminator_forward(dp, batch.real, batch.y, train=True, update_stats=update_stats)
    p_fake = discriminator_forward(dp, fakes, np.tile(batch.y, (n, 1)), train=True,
                                   update_stats=update_stats)
    p_mis = discriminator_forward(dp, batch.mismatch, batch.y, train=True, update_stats=update_stats)
    return discriminator_objective(p_real, p_fake.reshape(n, m), p_mis, _lengths_or_none(batch))


def _noise(shape, std: float, rng, dtype):
    if std == 0:
        return None
    if rng is None:
        raise ValueError("instance noise needs a random generator")
    return rng.normal(0.0, std, size=shape).astype(dtype)


def _noisy(x: np.ndarray, std: float, rng) -> np.ndarray:
    eps = _noise(x.shape, std, rng, x.dtype)
    return x if eps is None else x + eps


def fake_probabilities(models: Models, batch: Batch, update_stats: bool = True,
                       noise_std: float = 0.0, rng=None) -> Tensor:
    """D(G(h_t)|y) as an [n, m] word-major grid, differentiable in θ_g and θ_l."""
    n, m = batch.num_words, batch.size
    imgs = fake_images(models, batch, update_stats=update_stats)
    eps = _noise(imgs.shape, noise_std, rng, imgs.dtype)
    if eps is not None:
        imgs = imgs + Tensor(eps)
    p = discriminator_forward(models.disc, imgs, np.tile(batch.y, (n, 1)), train=True,
                              update_stats=False)
    return p.reshape(n, m)


def generator_loss(models: Models, batch: Batch, update_stats: bool = True) -> Tensor:
    return generator_objective(fake_probabilities(models, batch, update_stats), _lengths_or_none(batch))


def discriminator_update(models: Models, batch: Batch, adam_d: AdamState,
                         noise_std: float = 0.0, rng=None) -> float:
    """One ascent step on the discriminator; LSTM and generator stay untouched.

    With ``noise_std`` > 0 the real, fake and mismatched images are each
    perturbed by fresh Gaussian noise drawn from ``rng``.
    """
    with no_grad():
        fakes = fake_images(models, batch, update_stats=False).data
    if noise_std:
        fakes = _noisy(fakes, noise_std, rng)
        batch = replace(batch, real=_noisy(batch.real, noise_std, rng),
                        mismatch=_noisy(batch.mismatch, noise_std, rng))
    dp = models.disc
    dp.zero_grad()
    obj = discriminator_loss(models, batch, fakes)
    T.backward(obj)
    adam_step(dp, dp.grads(), adam_d, "ascend")
    dp.zero_grad()
    return obj.item()


def generator_lstm_update(models: Models, batch: Batch, adam_g: AdamState,
                          adam_l: AdamState, loss: str = "minimax",
                          noise_std: float = 0.0, rng=None) -> float:
    """One descent step on generator and LSTM; discriminator stays untouched.

    Returns the generator objective; ``loss`` picks the surrogate that is
    differentiated.
    """
    if loss not in GENERATOR_LOSSES:
        raise ValueError(f"unknown generator loss {loss!r}")
    gp, lp = models.gen, models.lstm
    gp.zero_grad()
    lp.zero_grad()
    with models.disc.frozen():
        p = fake_probabilities(models, batch, noise_std=noise_std, rng=rng)
        lengths = _lengths_or_none(batch)
        obj = generator_objective(p, lengths)
        T.backward(obj if loss == "minimax" else GENERATOR_LOSSES[loss](p, lengths))
    adam_step(gp, gp.grads(), adam_g, "descend")
    adam_step(lp, lp.grads(), adam_l, "descend")
    gp.zero_grad()
    lp.zero_grad()
    return obj.item()


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    d_objs: list
    g_obj: float
    seconds: float
    steps: list

    @property
    def d_obj(self) -> float:
        return float(np.mean(self.d_objs))


def train_iteration(models: Models, batch: Batch, adam: dict, disc_steps: int,
                    iteration: int = 0, epoch: int = 0, loss: str = "minimax",
                    noise_std: float = 0.0, rng=None) -> IterationRecord:
    start = time.perf_counter()
    d_objs, steps = [], []
    for _ in range(disc_steps):
        d_objs.append(discriminator_update(models, batch, adam["disc"], noise_std, rng))
        steps.append("D")
    g_obj = generator_lstm_update(models, batch, adam["gen"], adam["lstm"], loss, noise_std, rng)
    steps.append("G")
    if not all(math.isfinite(v) for v in d_objs + [g_obj]):
        raise T.NonFiniteError(f"non-finite objective at iteration {iteration}")
    return IterationRecord(iteration, epoch, d_objs, g_obj, time.perf_counter() - start, steps)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

LOG_HEADER = ["iter", "epoch", "d_obj", "g_obj", "seconds"]


def append_log(path, records: Sequence[IterationRecord]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LOG_HEADER)
        for r in records:
            w.writerow([r.iteration, r.epoch, repr(r.d_obj), repr(r.g_obj), f"{r.seconds:.4f}"])


@dataclass
class TrainResult:
    models: Models
    adam: dict
    records: list
    iteration: int
    epoch: int
    rng: np.random.Generator
    checkpoints: list


def iterations_per_epoch(n_records: int, batch_size: int) -> int:
    return -(-n_records // batch_size)


def train(dataset: Sequence[CaptionedImage], config: TrainingConfig, encoder: TextEncoder,
          out_dir=None, log_path=None, resume=None,
          on_epoch: Optional[Callable] = None) -> TrainResult:
    """Run the alternating schedule for ``config.epochs`` epochs.

    Each epoch shuffles the records and walks ceil(N / m) batches; the last
    batch wraps around the permutation so every batch holds exactly m
    records.  ``resume`` is a :class:`~wordgan.checkpoint.Checkpoint` whose
    models, optimizer moments, counters and RNG state are continued.
    """
    from .checkpoint import Checkpoint, save_checkpoint

    config.validate()
    if resume is not None:
        models = Models(resume.lstm, resume.gen, resume.disc, encoder)
        adam = resume.adam
        iteration, epoch = resume.iteration, resume.epoch
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
    else:
        models = build_models(config, encoder)
        adam = new_adam_states(config)
        iteration, epoch = 0, 0
        rng = np.random.default_rng(config.seed)

    per_epoch = iterations_per_epoch(len(dataset), config.batch_size)
    records, written = [], []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def stop() -> bool:
        return bool(config.max_iterations) and iteration >= config.max_iterations

    while epoch < config.epochs and not stop():
        perm = rng.permutation(len(dataset))
        epoch_records = []
        for b in range(per_epoch):
            if stop():
                break
            idx = np.take(perm, np.arange(b * config.batch_size, (b + 1) * config.batch_size), mode="wrap")
            batch = sample_batch(dataset, config.batch_size, rng, encoder, indices=idx, dtype=config.dtype)
            iteration += 1
            rec = train_iteration(models, batch, adam, config.disc_steps, iteration, epoch + 1,
                                  config.generator_loss, config.instance_noise, rng)
            epoch_records.append(rec)
        epoch += 1
        records.extend(epoch_records)
        if log_path is not None:
            append_log(log_path, epoch_records)
        if on_epoch is not None:
            on_epoch(epoch, epoch_records)
        if out_dir is not None and (epoch % config.checkpoint_interval == 0
                                    or epoch == config.epochs or stop()):
            ckpt = Checkpoint(models.lstm, models.gen, models.disc, adam, iteration, epoch,
                              asdict(config), rng.bit_generator.state, encoder.table)
            path = out_dir / f"ckpt_{epoch:05d}.lcg"
            save_checkpoint(ckpt, path)
            written.append(path)
    return TrainResult(models, adam, records, iteration, epoch, rng, written)

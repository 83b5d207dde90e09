"""Image similarity metrics and the per-word similarity report."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .checkpoint import Checkpoint, atomic_write_bytes
from .nets import DiscriminatorParams, discriminator_features, generate_sequence, init_discriminator
from .tensor import no_grad
from .text import CaptionedImage, WordEmbeddingTable


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 2.0  # width of the input range; images live in [-1, 1]

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("SSIM window extent must be odd")
        if min(self.sigma, self.k1, self.k2, self.dynamic_range) <= 0:
            raise ValueError("SSIM constants must be positive")

    # Inputs are rescaled to [0, 1] before comparison, where the range is 1.
    @property
    def c1(self) -> float:
        return self.k1 ** 2

    @property
    def c2(self) -> float:
        return self.k2 ** 2


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=0)
    if img.ndim != 2:
        raise ValueError(f"expected C x H x W or H x W image, got shape {img.shape}")
    return img


def _local(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = w.shape[0]
    return np.tensordot(sliding_window_view(x, (k, k)), w, axes=([2, 3], [0, 1]))


def ssim_maps(a, b, cfg: Optional[SsimConfig] = None):
    """Per-window luminance and contrast-structure terms over valid windows.

    Channel-mean images are mapped from [-L/2, L/2] to [0, 1] first.
    """
    cfg = cfg or SsimConfig()
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} and {b.shape} differ")
    ga = _gray(a) / cfg.dynamic_range + 0.5
    gb = _gray(b) / cfg.dynamic_range + 0.5
    if cfg.window > min(ga.shape):
        raise ValueError(f"SSIM window {cfg.window} exceeds image extent {ga.shape}")
    w = gaussian_window(cfg.window, cfg.sigma)
    mu_a, mu_b = _local(ga, w), _local(gb, w)
    var_a = _local(ga * ga, w) - mu_a * mu_a
    var_b = _local(gb * gb, w) - mu_b * mu_b
    cov = _local(ga * gb, w) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + cfg.c1) / (mu_a * mu_a + mu_b * mu_b + cfg.c1)
    cs = (2 * cov + cfg.c2) / (var_a + var_b + cfg.c2)
    return lum, cs


def ssim(a, b, cfg: Optional[SsimConfig] = None) -> float:
    """Mean structural similarity over Gaussian windows of the channel-mean images."""
    lum, cs = ssim_maps(a, b, cfg)
    return float(np.mean(lum * cs))


class FeatureExtractor:
    """Two-tap convolutional features: first and last strided-conv activations.

    Backed by a discriminator's convolution stack run in eval mode.
    """

    def __init__(self, disc: DiscriminatorParams):
        self.disc = disc

    @classmethod
    def random(cls, image_extent: int, channels: int = 3, base_channels: int = 16,
               seed: int = 0) -> "FeatureExtractor":
        return cls(init_discriminator(image_extent, channels, base_channels, 1, seed=seed))

    @property
    def input_shape(self) -> tuple:
        m = self.disc.meta
        return (m["channels"], m["image_extent"], m["image_extent"])

    def features(self, images) -> np.ndarray:
        """[N, C, H, W] (or one C x H x W image) -> [N, D] concatenated taps."""
        x = np.asarray(images, dtype=self.disc.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"extractor expects images of shape {self.input_shape}, got {x.shape[1:]}")
        with no_grad():
            feats = discriminator_features(self.disc, x, train=False)
        n = x.shape[0]
        early, late = feats[0].data.reshape(n, -1), feats[-1].data.reshape(n, -1)
        return np.concatenate([early, late], axis=1).astype(np.float64)


def feature_distance(extractor: FeatureExtractor, a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"feature_distance: shapes {a.shape} and {b.shape} differ")
    fa, fb = extractor.features(a), extractor.features(b)
    return float(np.linalg.norm(fa - fb))


REPORT_HEADER = ["sentence_id", "word_index", "ssim", "feat_dist"]


@dataclass
class SimilarityReport:
    rows: list = field(default_factory=list)        # (sentence_id, word_index, ssim, feat_dist)
    aggregates: list = field(default_factory=list)  # ("ALL", word_index, mean ssim, mean dist)

    def mean_ssim(self) -> dict:
        return {w: s for _, w, s, _ in self.aggregates}

    def mean_distance(self) -> dict:
        return {w: d for _, w, _, d in self.aggregates}

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(REPORT_HEADER)
        for sid, w, s, d in self.rows + self.aggregates:
            wr.writerow([sid, w, repr(float(s)), repr(float(d))])
        return buf.getvalue()

    def write(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("utf-8"))


def per_word_report(checkpoint: Checkpoint, dataset: Sequence[CaptionedImage], n_sentences: int,
                    seed: int = 0, extractor: Optional[FeatureExtractor] = None,
                    table: Optional[WordEmbeddingTable] = None,
                    ssim_cfg: Optional[SsimConfig] = None) -> SimilarityReport:
    """Compare every per-word image of sampled captions against their real image."""
    if not dataset:
        raise ValueError("cannot report on an empty dataset")
    if n_sentences < 1:
        raise ValueError("n_sentences must be positive")
    table = table if table is not None else checkpoint.table
    if table is None:
        raise ValueError("checkpoint carries no embedding table; pass one explicitly")
    extractor = extractor or FeatureExtractor(checkpoint.disc)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(dataset), size=n_sentences, replace=len(dataset) < n_sentences)

    report = SimilarityReport()
    by_word: dict[int, list] = {}
    for i in picks:
        rec = dataset[int(i)]
        k = int(rng.integers(len(rec.captions)))
        images = generate_sequence(checkpoint.lstm, checkpoint.gen, table, rec.captions[k])
        if images[0].shape != rec.image.shape:
            raise ValueError(f"model renders {images[0].shape}, dataset image is {rec.image.shape}")
        dists = np.linalg.norm(extractor.features(np.stack(images))
                               - extractor.features(rec.image), axis=1)
        for t, (img, dist) in enumerate(zip(images, dists), start=1):
            row = (rec.caption_id(k), t, ssim(img, rec.image, ssim_cfg), float(dist))
            report.rows.append(row)
            by_word.setdefault(t, []).append(row)
    for t in sorted(by_word):
        rows = by_word[t]
        report.aggregates.append(("ALL", t, float(np.mean([r[2] for r in rows])),
                                  float(np.mean([r[3] for r in rows]))))
    return report

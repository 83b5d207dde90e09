"""Word vectors, sentence conditions and captioned-image datasets."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

_PUNCT = re.compile(r"[^\w\s]", flags=re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return _PUNCT.sub("", text.lower()).split()


def _word_seed(seed: int, word: str) -> int:
    digest = hashlib.sha256(f"{seed}\x00{word}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class WordEmbeddingTable:
    dimension: int
    entries: dict = field(default_factory=dict)
    oov_seed: int = 0

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("embedding dimension must be positive")
        for word, vec in self.entries.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise ValueError(f"vector for {word!r} has shape {vec.shape}, expected ({self.dimension},)")
            self.entries[word] = vec

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, word: str) -> np.ndarray:
        vec = self.entries.get(word)
        if vec is not None:
            return vec
        # unit vector drawn from a generator seeded by (oov_seed, word)
        rng = np.random.default_rng(_word_seed(self.oov_seed, word))
        v = rng.standard_normal(self.dimension)
        return v / np.linalg.norm(v)


def load_word_vectors(path, oov_seed: int = 0) -> WordEmbeddingTable:
    """Read the word2vec text format: ``count dim`` header, then ``word v1 .. vd`` rows."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise ValueError(f"{path}: malformed header {' '.join(header)!r}")
        count, dim = int(header[0]), int(header[1])
        if dim <= 0:
            raise ValueError(f"{path}: dimension must be positive")
        entries: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p != ""]
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(f"{path}:{lineno}: {word!r} has {len(values)} values, expected {dim}")
            if word in entries:
                raise ValueError(f"{path}:{lineno}: duplicate word {word!r}")
            entries[word] = np.array([float(v) for v in values], dtype=np.float64)
    if len(entries) != count:
        raise ValueError(f"{path}: header declares {count} words, found {len(entries)}")
    return WordEmbeddingTable(dim, entries, oov_seed)


def save_word_vectors(table: WordEmbeddingTable, path) -> None:
    lines = [f"{len(table.entries)} {table.dimension}"]
    for word, vec in table.entries.items():
        lines.append(word + " " + " ".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def embed_words(table: WordEmbeddingTable, tokens: Sequence[str]) -> list[np.ndarray]:
    if not tokens:
        raise ValueError("cannot embed an empty token list")
    return [table.lookup(t) for t in tokens]


@dataclass(frozen=True)
class SentenceCondition:
    vector: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("condition vector has non-finite elements")

    def __len__(self) -> int:
        return len(self.vector)


def load_conditions(path) -> dict[str, np.ndarray]:
    """Precomputed condition file: one ``caption_id v1 .. vT`` line per caption."""
    out: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        if dim is None:
            dim = vec.size
        if vec.size != dim or dim == 0:
            raise ValueError(f"{path}:{lineno}: expected {dim} values, found {vec.size}")
        out[parts[0]] = vec
    return out


def sentence_condition(table: Optional[WordEmbeddingTable] = None,
                       tokens: Optional[Sequence[str]] = None,
                       precomputed: Optional[dict] = None,
                       caption_id: Optional[str] = None) -> SentenceCondition:
    """Mean of the word vectors, or the stored vector for ``caption_id``."""
    if precomputed is not None:
        if caption_id not in precomputed:
            raise KeyError(f"caption id {caption_id!r} not in precomputed conditions")
        return SentenceCondition(precomputed[caption_id])
    if isinstance(tokens, str):
        raise TypeError("tokens must be a sequence of words, not a string; tokenize it first")
    if not tokens:
        raise ValueError("cannot condition on an empty sentence")
    vecs = embed_words(table, tokens)
    return SentenceCondition(np.mean(np.stack(vecs), axis=0))


class TextEncoder:
    """Turns captions into (x(1..n), y) using a table and optional stored conditions."""

    def __init__(self, table: WordEmbeddingTable, conditions: Optional[dict] = None):
        self.table = table
        self.conditions = conditions
        if conditions:
            dims = {v.size for v in conditions.values()}
            if len(dims) != 1:
                raise ValueError("precomputed conditions disagree on dimension")
            self.condition_dim = dims.pop()
        else:
            self.condition_dim = table.dimension

    @property
    def embedding_dim(self) -> int:
        return self.table.dimension

    def words(self, tokens: Sequence[str]) -> np.ndarray:
        return np.stack(embed_words(self.table, tokens))

    def condition(self, tokens: Sequence[str], caption_id: Optional[str] = None) -> np.ndarray:
        if self.conditions is not None:
            return sentence_condition(precomputed=self.conditions, caption_id=caption_id).vector
        return sentence_condition(self.table, tokens).vector


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class CaptionedImage:
    image: np.ndarray  # C x H x W in [-1, 1]
    captions: list
    class_id: int
    record_id: str = ""

    def __post_init__(self):
        if not self.captions:
            raise ValueError(f"record {self.record_id!r} has no captions")
        if self.image.min() < -1.0 or self.image.max() > 1.0:
            raise ValueError(f"record {self.record_id!r} image leaves [-1, 1]")

    def caption_id(self, index: int) -> str:
        return f"{self.record_id}#{index}"


PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 0.8, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 0.9, 0.0),
    "purple": (0.6, 0.0, 0.8),
    "orange": (1.0, 0.5, 0.0),
    "black": (0.0, 0.0, 0.0),
    "cyan": (0.0, 0.9, 0.9),
}

CAPTION_TEMPLATES = (
    "one {size} {color} {shape} on a white background",
    "a {color} {shape} of {size} size on white",
    "this picture shows a single {size} {color} {shape}",
)


@dataclass
class SyntheticDatasetConfig:
    shapes: tuple = ("circle", "square", "triangle")
    colors: tuple = ("red", "green", "blue", "yellow")
    sizes: tuple = ("small", "large")
    image_extent: int = 64
    samples_per_combination: int = 5
    seed: int = 0
    color_values: dict = field(default_factory=lambda: dict(PALETTE))

    def validate(self) -> None:
        if not self.shapes or not self.colors or not self.sizes:
            raise ValueError("shapes, colors and sizes must be non-empty")
        if self.image_extent < 16:
            raise ValueError("image extent must be at least 16")
        if self.samples_per_combination < 1:
            raise ValueError("samples per combination must be positive")
        for s in self.shapes:
            if s not in ("circle", "square", "triangle"):
                raise ValueError(f"unknown shape {s!r}")
        for s in self.sizes:
            if s not in ("small", "large"):
                raise ValueError(f"unknown size {s!r}")
        for c in self.colors:
            if c not in self.color_values:
                raise ValueError(f"no RGB value for color {c!r}")


def _shape_mask(shape: str, extent: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:extent, 0:extent] + 0.5
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    if shape == "square":
        half = radius * 0.9
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    # upward triangle inscribed in the circle of the given radius
    top = cy - radius
    base = cy + radius * 0.75
    rel = (yy - top) / (base - top)
    halfwidth = rel * radius * 1.05
    return (yy >= top) & (yy <= base) & (np.abs(xx - cx) <= halfwidth)


def render_shape(shape: str, rgb, size: str, extent: int, rng: np.random.Generator) -> np.ndarray:
    radius = extent * (0.34 if size == "large" else 0.18)
    margin = radius + 1.0
    cy = rng.uniform(margin, extent - margin)
    cx = rng.uniform(margin, extent - margin)
    mask = _shape_mask(shape, extent, cy, cx, radius)
    img = np.ones((3, extent, extent))
    fg = np.asarray(rgb, dtype=np.float64) * 2.0 - 1.0
    img[:, mask] = fg[:, None]
    return img


def generate_synthetic_dataset(config: SyntheticDatasetConfig) -> list[CaptionedImage]:
    """Render every (shape, color, size) combination with jittered placement."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    records = []
    class_id = 0
    for shape in config.shapes:
        for color in config.colors:
            for size in config.sizes:
                captions = [t.format(size=size, color=color, shape=shape) for t in CAPTION_TEMPLATES]
                for k in range(config.samples_per_combination):
                    img = render_shape(shape, config.color_values[color], size, config.image_extent, rng)
                    rid = f"{shape}_{color}_{size}_{k:03d}"
                    records.append(CaptionedImage(img, list(captions), class_id, rid))
                class_id += 1
    return records


def dominant_color(image: np.ndarray, palette: dict, background=(1.0, 1.0, 1.0),
                   threshold: float = 0.5) -> Optional[str]:
    """Majority palette color over pixels that differ from the background.

    ``image`` is C x H x W in [-1, 1]; palette values are RGB in [0, 1].
    Returns None when no pixel departs from the background.
    """
    pix = (np.asarray(image).reshape(3, -1).T + 1.0) / 2.0
    bg = np.asarray(background)
    fg = pix[np.linalg.norm(pix - bg, axis=1) > threshold]
    if fg.size == 0:
        return None
    names = list(palette)
    ref = np.array([palette[n] for n in names])
    nearest = np.argmin(((fg[:, None, :] - ref[None, :, :]) ** 2).sum(-1), axis=1)
    counts = np.bincount(nearest, minlength=len(names))
    return names[int(np.argmax(counts))]


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """C x H x W in [-1, 1] -> H x W x C bytes."""
    scaled = np.rint((np.clip(image, -1.0, 1.0) + 1.0) * 127.5)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def load_image_caption_dir(path, target_extent: int) -> list[CaptionedImage]:
    """Read ``images/<id>.png`` with ``captions/<id>.txt`` (one caption per line)."""
    root = Path(path)
    img_dir, cap_dir = root / "images", root / "captions"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"{img_dir} is not a directory")
    classes = {}
    manifest = root / "manifest.json"
    if manifest.exists():
        classes = json.loads(manifest.read_text(encoding="utf-8")).get("classes", {})
    records = []
    files = sorted(p for p in img_dir.iterdir() if p.is_file())
    for n, img_path in enumerate(files):
        rid = img_path.stem
        cap_path = cap_dir / f"{rid}.txt"
        if not cap_path.exists():
            raise FileNotFoundError(f"image {img_path.name} has no caption file {cap_path}")
        try:
            with Image.open(img_path) as im:
                im = im.convert("RGB")
                if im.size != (target_extent, target_extent):
                    im = im.resize((target_extent, target_extent), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float64)
        except OSError as exc:
            raise ValueError(f"cannot read image {img_path}: {exc}") from exc
        image = arr.transpose(2, 0, 1) / 127.5 - 1.0
        captions = [ln.strip() for ln in cap_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        records.append(CaptionedImage(image, captions, int(classes.get(rid, n)), rid))
    return records

"""``wordgan`` command-line entry point.

Exit codes: 0 success, 2 config/validation error, 3 I/O or checkpoint
format error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import CheckpointError, latest_checkpoint, load_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config
from .evaluation import FeatureExtractor, per_word_report
from .nets import generate_sequence
from .tensor import NonFiniteError
from .text import (
    TextEncoder,
    WordEmbeddingTable,
    generate_synthetic_dataset,
    image_to_uint8,
    load_conditions,
    load_image_caption_dir,
    load_word_vectors,
    tokenize,
)
from .training import train

log = logging.getLogger("wordgan")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _thread_limit():
    raw = os.environ.get("WORDGAN_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"WORDGAN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("WORDGAN_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _png_bytes(arr: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _publish(staging: Path, target: Path) -> None:
    """Move every file of a finished staging tree into ``target``."""
    for src in sorted(staging.rglob("*")):
        if src.is_file():
            dst = target / src.relative_to(staging)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)


def _staging_dir(target: Path) -> Path:
    target.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))


def _encoder(cfg: RunConfig) -> TextEncoder:
    if cfg.embeddings:
        table = load_word_vectors(cfg.embeddings, oov_seed=cfg.oov_seed)
        if table.dimension != cfg.embedding_dim:
            raise ConfigError(
                f"{cfg.embeddings} has dimension {table.dimension}; set embedding_dim accordingly"
            )
    else:
        table = WordEmbeddingTable(cfg.embedding_dim, {}, cfg.oov_seed)
    conditions = load_conditions(cfg.conditions) if cfg.conditions else None
    return TextEncoder(table, conditions)


def _resolve_checkpoint(cfg: RunConfig) -> Path:
    target = Path(cfg.checkpoint or cfg.checkpoint_dir)
    if cfg.checkpoint and not target.is_dir():
        return target
    found = latest_checkpoint(target) if target.is_dir() else None
    if found is None:
        raise FileNotFoundError(f"no checkpoint found in {target}")
    return found


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_dataset(cfg: RunConfig) -> int:
    records = generate_synthetic_dataset(cfg.dataset_config())
    target = Path(cfg.output or cfg.dataset_dir)
    staging = _staging_dir(target)
    try:
        (staging / "images").mkdir()
        (staging / "captions").mkdir()
        for rec in records:
            (staging / "images" / f"{rec.record_id}.png").write_bytes(_png_bytes(image_to_uint8(rec.image)))
            (staging / "captions" / f"{rec.record_id}.txt").write_text("\n".join(rec.captions) + "\n",
                                                                    encoding="utf-8")
        manifest = {
            "seed": cfg.seed,
            "config": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in asdict(cfg.dataset_config()).items() if k != "color_values"},
            "classes": {rec.record_id: rec.class_id for rec in records},
        }
        (staging / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                               encoding="utf-8")
        target.mkdir(parents=True, exist_ok=True)
        _publish(staging, target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(f"wrote {len(records)} image/caption pairs to {target}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    dataset = load_image_caption_dir(cfg.dataset_dir, cfg.image_extent)
    encoder = _encoder(cfg)
    resume = None
    ckdir = Path(cfg.checkpoint_dir)
    if cfg.resume:
        found = latest_checkpoint(ckdir) if ckdir.is_dir() else None
        if found is None:
            raise FileNotFoundError(f"--resume given but no checkpoint in {ckdir}")
        resume = load_checkpoint(found)
        if resume.table is not None:
            encoder = TextEncoder(resume.table, encoder.conditions)
        print(f"resuming from {found} at iteration {resume.iteration}, epoch {resume.epoch}")
    log_path = Path(cfg.log_path) if cfg.log_path else ckdir / "loss_log.csv"
    ckdir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, records):
        if records:
            d = np.mean([r.d_obj for r in records])
            g = np.mean([r.g_obj for r in records])
            print(f"epoch {epoch:4d}  iter {records[-1].iteration:6d}  D {d:+.4f}  G {g:+.4f}", flush=True)

    result = train(dataset, cfg.training_config(), encoder, out_dir=ckdir, log_path=log_path,
                   resume=resume, on_epoch=progress)
    print(f"finished at iteration {result.iteration}; {len(result.checkpoints)} checkpoint(s) in {ckdir}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig) -> int:
    tokens = tokenize(cfg.text)
    if not tokens:
        raise ConfigError("text has no words")
    ckpt = load_checkpoint(_resolve_checkpoint(cfg))
    table = ckpt.table if ckpt.table is not None else _encoder(cfg).table
    images = generate_sequence(ckpt.lstm, ckpt.gen, table, tokens)
    target = Path(cfg.output or "generated")
    staging = _staging_dir(target)
    try:
        tiles = []
        for t, (tok, img) in enumerate(zip(tokens, images), start=1):
            arr = image_to_uint8(img)
            tiles.append(arr)
            (staging / f"word_{t}_{tok}.png").write_bytes(_png_bytes(arr))
        (staging / "strip.png").write_bytes(_png_bytes(np.concatenate(tiles, axis=1)))
        (staging / "strip.txt").write_text(" ".join(tokens) + "\n", encoding="utf-8")
        target.mkdir(parents=True, exist_ok=True)
        _publish(staging, target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(f"wrote {len(images)} images and strip.png to {target}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = load_checkpoint(_resolve_checkpoint(cfg))
    extent = ckpt.gen.meta["image_extent"]
    dataset = load_image_caption_dir(cfg.dataset_dir, extent)
    if cfg.extractor == "random":
        extractor = FeatureExtractor.random(extent, ckpt.gen.meta["channels"], seed=cfg.seed)
    else:
        extractor = FeatureExtractor(ckpt.disc)
    table = ckpt.table if ckpt.table is not None else _encoder(cfg).table
    report = per_word_report(ckpt, dataset, cfg.n_sentences, seed=cfg.seed, extractor=extractor, table=table)
    out = Path(cfg.output or "report.csv")
    report.write(out)
    means = report.mean_ssim()
    print("mean SSIM by word: " + " ".join(f"{w}:{s:.4f}" for w, s in means.items()))
    return EXIT_OK


def cmd_inspect(cfg: RunConfig) -> int:
    path = _resolve_checkpoint(cfg)
    ckpt = load_checkpoint(path)
    print(f"{path}: iteration {ckpt.iteration}, epoch {ckpt.epoch}")
    for name, ps in (("lstm", ckpt.lstm), ("generator", ckpt.gen), ("discriminator", ckpt.disc)):
        print(f"  {name:14s} {ps.num_elements():9d} parameters  {ps.dtype}  {ps.meta}")
    for name, st in ckpt.adam.items():
        print(f"  adam[{name}] t={st.t} lr={st.lr} beta1={st.beta1} beta2={st.beta2}")
    return EXIT_OK


COMMANDS = {
    "dataset": cmd_dataset,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wordgan", description="Per-word text-to-image GAN.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", dest="dataset_dir")
    p.add_argument("--text")
    p.add_argument("--out", dest="output")
    p.add_argument("--n-sentences", dest="n_sentences", type=int)
    p.add_argument("--resume", action="store_true", default=None)
    p.add_argument("--print-config", action="store_true", help="show the merged configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, checkpoint=args.checkpoint,
                          dataset_dir=args.dataset_dir, text=args.text, output=args.output,
                          n_sentences=args.n_sentences, resume=args.resume)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
        with _thread_limit():
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"wordgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"wordgan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"wordgan: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"wordgan: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

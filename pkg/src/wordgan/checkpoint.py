"""Binary checkpoint format.

Layout::

    b"LCGAN001"
    uint64 little-endian: manifest length in bytes
    manifest (UTF-8 JSON): config echo, counters, RNG state, parameter-set
        metadata, Adam hyperparameters, and one entry per tensor with
        name, shape, dtype and byte offset into the payload
    payload: raw little-endian tensor data, in manifest order
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .lstm import LstmParams
from .nets import DiscriminatorParams, GeneratorParams
from .text import WordEmbeddingTable
from .training import AdamState

MAGIC = b"LCGAN001"
_SETS = {"lstm": LstmParams, "gen": GeneratorParams, "disc": DiscriminatorParams}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    lstm: LstmParams
    gen: GeneratorParams
    disc: DiscriminatorParams
    adam: dict
    iteration: int
    epoch: int
    config: dict
    rng_state: Optional[dict] = None
    table: Optional[WordEmbeddingTable] = None


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries, blobs = [], []
    offset = 0

    def put(name: str, arr: np.ndarray) -> None:
        nonlocal offset
        arr = _le(np.asarray(arr))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    sets = {}
    for key in _SETS:
        ps = getattr(ckpt, key)
        sets[key] = {"meta": ps.meta, "params": list(ps.params), "buffers": list(ps.buffers)}
        for name, t in ps.params.items():
            put(f"{key}/{name}", t.data)
        for name, b in ps.buffers.items():
            put(f"{key}.buffer/{name}", b)

    adam = {}
    for key, st in ckpt.adam.items():
        adam[key] = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "t": st.t,
                     "names": list(st.m)}
        for name in st.m:
            put(f"adam.{key}.m/{name}", st.m[name])
            put(f"adam.{key}.v/{name}", st.v[name])

    table = None
    if ckpt.table is not None:
        words = list(ckpt.table.entries)
        table = {"dimension": ckpt.table.dimension, "oov_seed": ckpt.table.oov_seed, "words": words}
        if words:
            put("text/embeddings", np.stack([ckpt.table.entries[w] for w in words]))

    manifest = {
        "config": ckpt.config,
        "iteration": ckpt.iteration,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "sets": sets,
        "adam": adam,
        "table": table,
        "entries": entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(mbytes)) + mbytes + b"".join(blobs)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if data[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic {data[:8]!r})")
    if len(data) < 16:
        raise CheckpointError(f"{source}: truncated before manifest length (file has {len(data)} bytes)")
    (mlen,) = struct.unpack("<Q", data[8:16])
    if 16 + mlen > len(data):
        raise CheckpointError(
            f"{source}: manifest needs bytes [16, {16 + mlen}) but file has {len(data)} bytes"
        )
    try:
        manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable manifest: {exc}") from exc
    base = 16 + mlen
    tensors = {}
    for e in manifest["entries"]:
        start, end = base + e["offset"], base + e["offset"] + e["nbytes"]
        dt = np.dtype(e["dtype"])
        expected = int(np.prod(e["shape"], dtype=np.int64)) * dt.itemsize
        if expected != e["nbytes"]:
            raise CheckpointError(
                f"{source}: entry {e['name']!r} declares shape {e['shape']} ({expected} bytes) "
                f"but {e['nbytes']} bytes of payload"
            )
        if end > len(data):
            raise CheckpointError(
                f"{source}: truncated at entry {e['name']!r}: needs bytes [{start}, {end}) "
                f"but file ends at byte {len(data)}"
            )
        arr = np.frombuffer(data, dtype=dt, count=expected // dt.itemsize, offset=start)
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))

    def need(name):
        try:
            return tensors[name]
        except KeyError:
            raise CheckpointError(f"{source}: manifest lacks entry {name!r}") from None

    sets = {}
    for key, cls in _SETS.items():
        info = manifest["sets"][key]
        arrays = {n: need(f"{key}/{n}") for n in info["params"]}
        buffers = {n: need(f"{key}.buffer/{n}") for n in info["buffers"]}
        sets[key] = cls(arrays, buffers, **info["meta"])

    adam = {}
    for key, info in manifest["adam"].items():
        st = AdamState(info["lr"], info["beta1"], info["beta2"], info["eps"], info["t"])
        for n in info["names"]:
            st.m[n] = need(f"adam.{key}.m/{n}")
            st.v[n] = need(f"adam.{key}.v/{n}")
        adam[key] = st

    table = None
    if manifest.get("table") is not None:
        ti = manifest["table"]
        entries = {}
        if ti["words"]:
            emb = need("text/embeddings")
            entries = {w: emb[i].copy() for i, w in enumerate(ti["words"])}
        table = WordEmbeddingTable(ti["dimension"], entries, ti["oov_seed"])

    return Checkpoint(sets["lstm"], sets["gen"], sets["disc"], adam, manifest["iteration"],
                      manifest["epoch"], manifest["config"], manifest["rng_state"], table)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    return decode_checkpoint(data, str(path))


def latest_checkpoint(directory) -> Optional[Path]:
    found = sorted(Path(directory).glob("ckpt_*.lcg"))
    return found[-1] if found else None

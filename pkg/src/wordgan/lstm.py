"""Word-by-word LSTM encoder (no peepholes)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .params import ParamSet
from .tensor import Tensor

GATES = ("i", "f", "o", "c")


class LstmParams(ParamSet):
    kind = "lstm"

    @property
    def embedding_dim(self) -> int:
        return self.meta["embedding_dim"]

    @property
    def hidden_dim(self) -> int:
        return self.meta["hidden_dim"]


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def init_lstm(embedding_dim: int, hidden_dim: int, seed: int = 0,
              init_scale: float = 0.08, dtype=np.float64) -> LstmParams:
    """Uniform weights in [-init_scale, init_scale]; zero biases except forget = 1."""
    if embedding_dim <= 0 or hidden_dim <= 0:
        raise ValueError("LSTM dimensions must be positive")
    if init_scale <= 0:
        raise ValueError("init_scale must be positive")
    rng = np.random.default_rng(seed)
    arrays = {}
    for g in GATES:
        arrays[f"W_x{g}"] = rng.uniform(-init_scale, init_scale, (hidden_dim, embedding_dim))
        arrays[f"W_h{g}"] = rng.uniform(-init_scale, init_scale, (hidden_dim, hidden_dim))
        arrays[f"b_{g}"] = np.full(hidden_dim, 1.0 if g == "f" else 0.0)
    arrays = {k: v.astype(dtype) for k, v in arrays.items()}
    return LstmParams(arrays, embedding_dim=embedding_dim, hidden_dim=hidden_dim)


def zero_state(params: LstmParams, batch: int) -> LstmState:
    z = np.zeros((batch, params.hidden_dim), dtype=params.dtype)
    return LstmState(Tensor(z), Tensor(z.copy()))


def _gate(params: LstmParams, g: str, x: Tensor, h: Tensor) -> Tensor:
    pre = T.matmul(x, T.transpose(params[f"W_x{g}"])) + T.matmul(h, T.transpose(params[f"W_h{g}"]))
    return pre + params[f"b_{g}"]


def lstm_step(params: LstmParams, x_t, state: Optional[LstmState] = None):
    """One recurrence step on a batch ``x_t`` of shape [N, E] (or a single [E] vector)."""
    x_t = x_t if isinstance(x_t, Tensor) else Tensor(np.asarray(x_t, dtype=params.dtype))
    single = x_t.ndim == 1
    if single:
        x_t = x_t.reshape(1, -1)
    if x_t.ndim != 2 or x_t.shape[1] != params.embedding_dim:
        raise ValueError(f"lstm_step: input width {x_t.shape[-1]} != embedding dim {params.embedding_dim}")
    if state is None:
        state = zero_state(params, x_t.shape[0])
    h, c = state.h, state.c
    if h.shape != (x_t.shape[0], params.hidden_dim) or c.shape != h.shape:
        raise ValueError(f"lstm_step: state shape {h.shape}/{c.shape} does not fit batch")

    i = T.sigmoid(_gate(params, "i", x_t, h))
    f = T.sigmoid(_gate(params, "f", x_t, h))
    o = T.sigmoid(_gate(params, "o", x_t, h))
    g = T.tanh(_gate(params, "c", x_t, h))
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    if single:
        return h_new.reshape(-1), LstmState(h_new, c_new)
    return h_new, LstmState(h_new, c_new)


def lstm_unroll(params: LstmParams, xs: Sequence, state: Optional[LstmState] = None) -> list:
    """Feed x(1)..x(n) in order from a zero state; returns [h_1 .. h_n]."""
    if len(xs) == 0:
        raise ValueError("lstm_unroll needs at least one input")
    hs = []
    for x in xs:
        h, state = lstm_step(params, x, state)
        hs.append(h)
    return hs

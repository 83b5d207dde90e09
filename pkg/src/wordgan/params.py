"""Named parameter collections backed by leaf tensors."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .tensor import Tensor


class ParamSet:
    """Ordered trainable tensors plus untrained buffers (batch-norm running stats).

    ``meta`` carries the integer hyperparameters needed to rebuild the set.
    """

    kind = "params"

    def __init__(self, arrays: dict, buffers: dict | None = None, **meta):
        self.params = {k: Tensor(np.asarray(v), requires_grad=True) for k, v in arrays.items()}
        self.buffers = {k: np.asarray(v).copy() for k, v in (buffers or {}).items()}
        self.meta = dict(meta)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def arrays(self) -> dict:
        return {k: t.data for k, t in self.params.items()}

    def snapshot(self) -> dict:
        """Deep copy of parameters and buffers, for equality checks."""
        snap = {k: t.data.copy() for k, t in self.params.items()}
        snap.update({f"buffer:{k}": v.copy() for k, v in self.buffers.items()})
        return snap

    def grads(self) -> dict:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def astype(self, dtype) -> "ParamSet":
        out = self.__class__.__new__(self.__class__)
        out.params = {k: Tensor(t.data.astype(dtype), requires_grad=True) for k, t in self.params.items()}
        out.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        out.meta = dict(self.meta)
        return out

    def num_elements(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    @contextmanager
    def frozen(self):
        """Stop recording gradients for these parameters inside the block."""
        flags = {k: t.requires_grad for k, t in self.params.items()}
        for t in self.params.values():
            t.requires_grad_(False)
        try:
            yield self
        finally:
            for k, t in self.params.items():
                t.requires_grad_(flags[k])

    @classmethod
    def from_state(cls, arrays: dict, buffers: dict, meta: dict) -> "ParamSet":
        return cls(arrays, buffers, **meta)

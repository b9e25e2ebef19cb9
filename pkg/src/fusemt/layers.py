"""Shared neural building blocks: parameter init, GRU cell, freezing.

Parameter containers expose tensors() -> dict of dotted-name -> Tensor
so optimizers, checkpoints, and freeze checksums can walk them
uniformly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from fusemt.tensor import Tensor, add, gru_gates, matmul


def init_uniform(rng: np.random.Generator, shape, dtype=np.float32, scale=None) -> Tensor:
    """Uniform(-s, s) init; default s = 1/sqrt(fan_in)."""
    if scale is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        scale = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def init_zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


@dataclass
class GruCell:
    """Single gated recurrent cell; gate order z|r|c in the packed dim."""

    Wx: Tensor  # (in_dim, 3h)
    Wh: Tensor  # (h, 3h)
    bx: Tensor  # (3h,)
    bh: Tensor  # (3h,)

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, hidden: int, dtype=np.float32):
        return cls(
            Wx=init_uniform(rng, (in_dim, 3 * hidden), dtype),
            Wh=init_uniform(rng, (hidden, 3 * hidden), dtype),
            bx=init_zeros((3 * hidden,), dtype),
            bh=init_zeros((3 * hidden,), dtype),
        )

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[0]

    def step(self, x: Tensor, h_prev: Tensor) -> Tensor:
        """One recurrence step: x (B, in_dim), h_prev (B, h) -> (B, h)."""
        ax = add(matmul(x, self.Wx), self.bx)
        ah = add(matmul(h_prev, self.Wh), self.bh)
        return gru_gates(ax, ah, h_prev)

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.Wx": self.Wx,
            f"{prefix}.Wh": self.Wh,
            f"{prefix}.bx": self.bx,
            f"{prefix}.bh": self.bh,
        }


def freeze_tensors(tensors: dict[str, Tensor]) -> None:
    """Remove every mutation path: no gradients, read-only buffers."""
    for t in tensors.values():
        t.requires_grad = False
        t.grad = None
        t.data.flags.writeable = False


def checksum_tensors(tensors: dict[str, Tensor]) -> str:
    """Order-independent content hash over named tensors."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name]
        digest.update(name.encode("utf-8"))
        digest.update(str(t.shape).encode("ascii"))
        digest.update(np.ascontiguousarray(t.data).tobytes())
    return digest.hexdigest()

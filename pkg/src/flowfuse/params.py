"""Named trainable parameters with Adam moment slots."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .autodiff import Tensor


def derive_rng(*entropy) -> np.random.Generator:
    """Generator seeded from a tuple of ints and/or strings (strings hashed with crc32)."""
    words = [zlib.crc32(e.encode()) if isinstance(e, str) else int(e) for e in entropy]
    return np.random.default_rng(np.random.SeedSequence(words))


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class ParamStore:
    """Ordered mapping name -> Tensor, plus first/second moments for Adam.

    Each parameter draws its initial values from its own generator keyed by
    (seed, name), so adding a parameter never shifts the others.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def weight(self, name: str, rows: int, cols: int) -> Tensor:
        return self._add(name, glorot_uniform(rows, cols, derive_rng(self.seed, 1, name)))

    def bias(self, name: str, cols: int) -> Tensor:
        return self._add(name, np.zeros((1, cols)))

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def count(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            missing = set(self.params) ^ set(values)
            raise KeyError(f"parameter sets differ: {sorted(missing)[:5]}")
        for k, v in values.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].value = np.array(v, dtype=np.float64)

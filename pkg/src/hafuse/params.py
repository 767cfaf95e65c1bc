"""Named parameter collections and seeded initialization."""

from __future__ import annotations

import contextlib
import zlib
from collections.abc import Mapping
from typing import Iterator

import numpy as np

from hafuse.autodiff import Tensor
from hafuse.errors import ContractError, DimensionError


class ParamSet(Mapping):
    """Ordered mapping from a stable path string to a learnable tensor.

    Iteration is always in lexicographic key order, which fixes the layout of
    checkpoints and optimizer state independently of construction order.
    """

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise ContractError(f"duplicate parameter path {name!r}")
        tensor.name = name
        tensor.requires_grad = True
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._tensors))

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._tensors.values())).dtype

    def numel(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: self[k].data.copy() for k in self}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self._tensors) ^ set(state)
        if missing:
            raise ContractError(f"parameter names differ: {sorted(missing)}")
        for k, arr in state.items():
            t = self._tensors[k]
            if tuple(arr.shape) != t.shape:
                raise DimensionError(f"{k}: stored shape {arr.shape} != live shape {t.shape}")
            t.data = np.array(arr, dtype=t.dtype)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: Tensor(self[k].data, dtype=dtype) for k in self})

    def copy(self) -> "ParamSet":
        return self.astype(self.dtype)

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily exclude every tensor from gradient tracking."""
        flags = {k: t.requires_grad for k, t in self._tensors.items()}
        for t in self._tensors.values():
            t.requires_grad = False
        try:
            yield self
        finally:
            for k, t in self._tensors.items():
                t.requires_grad = flags[k]


class Initializer:
    """Fan-in scaled uniform weights and zero biases.

    Each tensor draws from its own generator keyed by ``(seed, crc32(name))``
    so a parameter's initial value depends only on the seed and its path.
    """

    def __init__(self, params: ParamSet, seed: int, dtype=np.float32, slope: float = 0.2):
        self.params = params
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.gain = float(np.sqrt(2.0 / (1.0 + slope * slope)))

    def _uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
        bound = self.gain * np.sqrt(3.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), dtype=self.dtype)

    def conv(self, prefix: str, out_ch: int, in_ch: int, k: int, bias: bool = True) -> None:
        self.params.add(f"{prefix}.weight", self._uniform(f"{prefix}.weight", (out_ch, in_ch, k, k), in_ch * k * k))
        if bias:
            self.params.add(f"{prefix}.bias", Tensor(np.zeros((1, out_ch, 1, 1)), dtype=self.dtype))

    def kernel1d(self, prefix: str, k: int) -> None:
        self.params.add(f"{prefix}.weight", self._uniform(f"{prefix}.weight", (1, 1, 1, k), k))

    def dense(self, prefix: str, out_n: int, in_n: int) -> None:
        self.params.add(f"{prefix}.weight", self._uniform(f"{prefix}.weight", (out_n, in_n, 1, 1), in_n))
        self.params.add(f"{prefix}.bias", Tensor(np.zeros((1, out_n, 1, 1)), dtype=self.dtype))

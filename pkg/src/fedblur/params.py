"""Layered flat parameter storage.

A :class:`ParamVector` keeps every scalar of a model in one contiguous
float64 array and remembers how that array splits into named layers. Model
weights, local updates and sparsification masks all share this type, which
keeps the elementwise algebra used by clipping, noising and masking trivial.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError

Layout = tuple[tuple[str, int], ...]


class ParamVector:
    __slots__ = ("layout", "values", "_offsets")

    def __init__(self, layout: Sequence[tuple[str, int]], values=None):
        self.layout: Layout = tuple((str(name), int(size)) for name, size in layout)
        sizes = [size for _, size in self.layout]
        if any(size < 0 for size in sizes):
            raise ConfigError("layer sizes must be non-negative")
        self._offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]))
        total = int(self._offsets[-1])
        if values is None:
            self.values = np.zeros(total, dtype=np.float64)
        else:
            arr = np.asarray(values, dtype=np.float64).reshape(-1)
            if arr.size != total:
                raise ConfigError(f"expected {total} values for layout, got {arr.size}")
            self.values = arr

    @classmethod
    def from_layers(cls, layers: Sequence[tuple[str, np.ndarray]]) -> "ParamVector":
        layout = [(name, int(np.size(arr))) for name, arr in layers]
        flat = np.concatenate([np.asarray(arr, dtype=np.float64).reshape(-1) for _, arr in layers]) if layers else np.zeros(0)
        return cls(layout, flat)

    @property
    def total_dim(self) -> int:
        return int(self.values.size)

    @property
    def layer_names(self) -> list[str]:
        return [name for name, _ in self.layout]

    def layer(self, index_or_name) -> np.ndarray:
        """Return a writable view of one layer's values."""
        if isinstance(index_or_name, str):
            index = self.layer_names.index(index_or_name)
        else:
            index = index_or_name
        return self.values[self._offsets[index]:int(self._offsets[index + 1])]

    def layer_slices(self) -> list[slice]:
        return [slice(self._offsets[i], int(self._offsets[i + 1])) for i in range(len(self.layout))]

    def layers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, (name, _) in enumerate(self.layout):
            yield name, self.layer(i)

    def check_layout(self, other: "ParamVector") -> None:
        if self.layout is not other.layout and self.layout != other.layout:
            raise ConfigError("parameter layouts differ")

    def copy(self) -> "ParamVector":
        return self.like(self.values.copy())

    def like(self, values) -> "ParamVector":
        """New vector with this layout and the given flat values."""
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.size != self.values.size:
            raise ConfigError(f"expected {self.values.size} values for layout, got {arr.size}")
        out = ParamVector.__new__(ParamVector)
        out.layout, out.values, out._offsets = self.layout, arr, self._offsets
        return out

    def zeros_like(self) -> "ParamVector":
        return self.like(np.zeros(self.total_dim))

    def ones_like(self) -> "ParamVector":
        return ParamVector(self.layout, np.ones(self.total_dim))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def hadamard(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.like(self.values * other.values)

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.like(self.values + other.values)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.like(self.values - other.values)

    def __mul__(self, scalar: float) -> "ParamVector":
        if isinstance(scalar, ParamVector):
            raise TypeError("use hadamard() for elementwise products")
        return self.like(self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ParamVector":
        return self.like(self.values / float(scalar))

    def __neg__(self) -> "ParamVector":
        return self.like(-self.values)

    def __len__(self) -> int:
        return self.total_dim

    def __repr__(self) -> str:
        layers = ", ".join(f"{name}:{size}" for name, size in self.layout)
        return f"ParamVector([{layers}], norm={self.norm():.6g})"

"""Flat parameter vectors with named segment layout.

Every model exchanged in the protocol (extractor, classifier, generator) is a
``ParamVector``: one contiguous float64 array plus an ordered list of
``(name, shape)`` segments describing how to carve it into tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, LayoutMismatchError

Layout = tuple[tuple[str, tuple[int, ...]], ...]


def _segment_size(shape: tuple[int, ...]) -> int:
    return int(math.prod(shape))


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise InvalidInputError(f"values must be 1-D, got shape {values.shape}")
        layout = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.layout)
        names = [n for n, _ in layout]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate segment names in layout: {names}")
        total = sum(_segment_size(s) for _, s in layout)
        if total != values.size:
            raise InvalidInputError(
                f"layout describes {total} elements but values has {values.size}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    # construction -----------------------------------------------------------
    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = list(arrays.items()) if isinstance(arrays, Mapping) else list(arrays)
        layout = tuple((name, tuple(np.shape(a))) for name, a in items)
        if items:
            flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in items])
        else:
            flat = np.zeros(0)
        return cls(flat, layout)

    @classmethod
    def zeros(cls, layout: Layout) -> "ParamVector":
        return cls(np.zeros(sum(_segment_size(s) for _, s in layout)), layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    # segment access ---------------------------------------------------------
    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.layout)

    @property
    def size(self) -> int:
        return self.values.size

    def _offsets(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        out, pos = {}, 0
        for name, shape in self.layout:
            n = _segment_size(shape)
            out[name] = (pos, pos + n, shape)
            pos += n
        return out

    def segment(self, name: str) -> np.ndarray:
        """Read-only view of one segment, reshaped."""
        try:
            lo, hi, shape = self._offsets()[name]
        except KeyError:
            raise KeyError(f"no segment {name!r}; have {self.names}") from None
        view = self.values[lo:hi].reshape(shape)
        view.flags.writeable = False
        return view

    def unflatten(self) -> dict[str, np.ndarray]:
        return {name: self.values[lo:hi].reshape(shape).copy()
                for name, (lo, hi, shape) in self._offsets().items()}

    def select(self, prefix: str) -> "ParamVector":
        """Sub-vector made of the segments whose names start with ``prefix``."""
        return ParamVector.from_arrays(
            [(n, a) for n, a in self.unflatten().items() if n.startswith(prefix)])

    def concat(self, other: "ParamVector") -> "ParamVector":
        return ParamVector(np.concatenate([self.values, other.values]),
                           self.layout + other.layout)

    # arithmetic -------------------------------------------------------------
    def check_layout(self, other: "ParamVector") -> None:
        if not isinstance(other, ParamVector):
            raise LayoutMismatchError(f"expected ParamVector, got {type(other).__name__}")
        if self.layout != other.layout:
            raise LayoutMismatchError(
                f"layout mismatch: {self.names} vs {other.names}")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return ParamVector(self.values - other.values, self.layout)

    def __mul__(self, scalar: float) -> "ParamVector":
        if isinstance(scalar, ParamVector):
            return NotImplemented
        return ParamVector(self.values * float(scalar), self.layout)

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return ParamVector(-self.values, self.layout)

    def __len__(self) -> int:
        return self.values.size

    def equals(self, other: "ParamVector") -> bool:
        """Bit-exact equality of layout and values."""
        return (isinstance(other, ParamVector) and self.layout == other.layout
                and self.values.tobytes() == other.values.tobytes())

    def __repr__(self) -> str:
        return f"ParamVector(size={self.size}, segments={list(self.names)})"


def stack(vectors: Sequence[ParamVector]) -> np.ndarray:
    """Stack same-layout vectors into an ``(n, size)`` matrix."""
    if not vectors:
        raise InvalidInputError("cannot stack an empty sequence")
    first = vectors[0]
    for v in vectors[1:]:
        first.check_layout(v)
    return np.stack([v.values for v in vectors])


def ordered_weighted_sum(matrix: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Column-wise ``sum_i w_i * matrix[i]`` independent of row order.

    Products are sorted per column before summation, so relabeling the rows
    gives a bit-identical result.
    """
    products = np.asarray(weights, dtype=np.float64)[:, None] * matrix
    return np.sort(products, axis=0).sum(axis=0)

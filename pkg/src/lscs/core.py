"""Index-set algebra and magnitude order statistics for sparse vectors.

Signal vectors are plain 1-D numpy arrays of length ``m``.  Support sets are
immutable sorted index sets that carry their ambient dimension so that set
algebra between mismatched spaces fails loudly.

Magnitude ties are broken by the smaller index everywhere, which keeps every
ordering deterministic.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np


class AmbientDimensionMismatch(ValueError):
    """Set algebra attempted between supports of different ambient dimension."""


class SupportSet:
    """Immutable sorted set of indices in ``[0, m)``."""

    __slots__ = ("_indices", "_m")

    def __init__(self, indices: Iterable[int], m: int):
        idx = tuple(sorted({int(i) for i in indices}))
        if m < 0:
            raise ValueError("ambient dimension must be nonnegative")
        if idx and (idx[0] < 0 or idx[-1] >= m):
            raise ValueError(f"indices must lie in [0, {m})")
        self._indices = idx
        self._m = int(m)

    @classmethod
    def empty(cls, m: int) -> "SupportSet":
        return cls((), m)

    @property
    def indices(self) -> tuple[int, ...]:
        return self._indices

    @property
    def m(self) -> int:
        return self._m

    def to_array(self) -> np.ndarray:
        return np.asarray(self._indices, dtype=np.intp)

    def complement(self) -> "SupportSet":
        mask = np.ones(self._m, dtype=bool)
        mask[list(self._indices)] = False
        return SupportSet(np.nonzero(mask)[0], self._m)

    def _check(self, other: "SupportSet") -> None:
        if not isinstance(other, SupportSet):
            raise TypeError("expected a SupportSet")
        if self._m != other._m:
            raise AmbientDimensionMismatch(
                f"ambient dimensions differ: {self._m} != {other._m}"
            )

    def union(self, other: "SupportSet") -> "SupportSet":
        self._check(other)
        return SupportSet(set(self._indices) | set(other._indices), self._m)

    def intersection(self, other: "SupportSet") -> "SupportSet":
        self._check(other)
        return SupportSet(set(self._indices) & set(other._indices), self._m)

    def difference(self, other: "SupportSet") -> "SupportSet":
        self._check(other)
        return SupportSet(set(self._indices) - set(other._indices), self._m)

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def __len__(self) -> int:
        return len(self._indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self._indices)

    def __contains__(self, i: object) -> bool:
        return i in set(self._indices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SupportSet):
            return NotImplemented
        return self._m == other._m and self._indices == other._indices

    def __hash__(self) -> int:
        return hash((self._indices, self._m))

    def __repr__(self) -> str:
        return f"SupportSet({list(self._indices)}, m={self._m})"


def support_of(v: np.ndarray, tol: float = 0.0) -> SupportSet:
    """Support of a signal vector: indices with ``|v_i| > tol``."""
    v = np.asarray(v, dtype=float)
    return SupportSet(np.nonzero(np.abs(v) > tol)[0], v.shape[0])


def magnitude_order(v: np.ndarray, support: SupportSet | None = None) -> np.ndarray:
    """Indices sorted by decreasing magnitude, ties broken by smaller index."""
    v = np.asarray(v, dtype=float)
    idx = np.arange(v.shape[0]) if support is None else support.to_array()
    # stable sort on -|v| keeps the original (increasing index) order on ties
    order = np.argsort(-np.abs(v[idx]), kind="stable")
    return idx[order]


def kth_largest_magnitude(v: np.ndarray, k: int, support: SupportSet | None = None) -> float:
    """Magnitude of the k-th largest-magnitude entry of ``v`` (1-based ``k``).

    Restricted to ``support`` when given.
    """
    order = magnitude_order(v, support)
    if not 1 <= k <= order.shape[0]:
        raise ValueError(f"k={k} out of range [1, {order.shape[0]}]")
    return float(abs(np.asarray(v, dtype=float)[order[k - 1]]))


def smallest_k_subvector(
    v: np.ndarray, support: SupportSet, k: int
) -> tuple[SupportSet, float]:
    """Index set of the ``k`` smallest-magnitude entries of ``v`` on ``support``
    together with their squared Euclidean norm.

    ``k == 0`` returns the empty set and 0.
    """
    if not 0 <= k <= len(support):
        raise ValueError(f"k={k} out of range [0, {len(support)}]")
    if k == 0:
        return SupportSet.empty(support.m), 0.0
    v = np.asarray(v, dtype=float)
    idx = support.to_array()
    # ascending magnitude, ties broken by smaller index
    order = idx[np.argsort(np.abs(v[idx]), kind="stable")]
    chosen = order[:k]
    sq = float(np.sum(v[chosen] ** 2))
    return SupportSet(chosen, support.m), sq

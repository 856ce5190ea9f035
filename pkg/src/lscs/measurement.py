"""Measurement matrices and restricted isometry / orthogonality constants.

``delta_exhaustive`` and ``theta_exhaustive`` enumerate every column subset of
the requested size, so their output is the exact constant.  Enumeration is
gated by a subset-count budget (default 2e6) rather than hard size caps.  The
``*_sampled`` variants maximise over random subsets only; their output is a
lower bound on the true constant and is flagged as such, because any bound
computed from an under-estimated constant is optimistic.

Both constants are monotone: enlarging a column subset can only widen the
eigenvalue range of its Gram block, and a submatrix spectral norm never
exceeds that of the enclosing matrix.  Enumerating subsets of exactly the
requested size therefore yields the constant for "all subsets up to that
size".
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from itertools import combinations, islice
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_SUBSET_BUDGET = 2_000_000
_CHUNK = 20_000
_COLUMN_NORM_TOL = 1e-12


class EnumerationBudgetExceeded(RuntimeError):
    """Exhaustive subset enumeration would exceed the configured budget."""


class InsufficientRipTable(KeyError):
    """A bound or scan needs constants the table does not contain."""


@dataclass(frozen=True)
class MeasurementMatrix:
    """An n x m measurement matrix with unit Euclidean-norm columns."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2:
            raise ValueError("entries must be a 2-D array")
        norms = np.linalg.norm(a, axis=0)
        if np.any(np.abs(norms - 1.0) > _COLUMN_NORM_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValueError(f"columns must have unit norm (worst deviation {worst:.3e})")
        object.__setattr__(self, "entries", a)

    @classmethod
    def from_columns(cls, raw: np.ndarray) -> "MeasurementMatrix":
        """Build from an arbitrary matrix by rescaling each column to unit norm."""
        raw = np.asarray(raw, dtype=float)
        norms = np.linalg.norm(raw, axis=0)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize a zero column")
        return cls(raw / norms)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    @property
    def induced_one_norm(self) -> float:
        """Max absolute column sum."""
        return float(np.max(np.sum(np.abs(self.entries), axis=0)))

    def gram(self) -> np.ndarray:
        return self.entries.T @ self.entries

    def columns(self, indices) -> np.ndarray:
        idx = indices.to_array() if hasattr(indices, "to_array") else np.asarray(indices, dtype=np.intp)
        return self.entries[:, idx]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.entries).tobytes())
        h.update(str(self.entries.shape).encode())
        return h.hexdigest()


def gen_gaussian_matrix(n: int, m: int, seed: int) -> MeasurementMatrix:
    """Random matrix with i.i.d. standard normal entries, columns rescaled to
    unit norm.  Deterministic per seed."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    rng = np.random.default_rng(seed)
    return MeasurementMatrix.from_columns(rng.standard_normal((n, m)))


def gen_perturbed_orthonormal_matrix(
    n: int, m: int, seed: int, noise_scale: float = 0.2
) -> MeasurementMatrix:
    """Rows of a random orthogonal matrix plus scaled Gaussian noise, columns
    normalized.

    Small instances of this ensemble have small isometry constants, unlike
    plain Gaussian matrices whose constants at m <= 16 are nearly always too
    large for any of the error bounds to apply.  Used by the bound-validation
    harness; requires n <= m.
    """
    if not 1 <= n <= m:
        raise ValueError("need 1 <= n <= m")
    rng = np.random.default_rng(seed)
    q = np.linalg.qr(rng.standard_normal((m, m)))[0][:n, :]
    raw = q + noise_scale * rng.standard_normal((n, m)) / np.sqrt(n)
    return MeasurementMatrix.from_columns(raw)


def _subset_count(m: int, s: int) -> int:
    return math.comb(m, s)


def _iter_chunks(it: Iterator, size: int) -> Iterator[list]:
    while True:
        block = list(islice(it, size))
        if not block:
            return
        yield block


def _gram_deviation_max(gram: np.ndarray, subsets: np.ndarray) -> float:
    """Worst deviation of Gram-block eigenvalues from 1 over stacked subsets."""
    blocks = gram[subsets[:, :, None], subsets[:, None, :]]
    w = np.linalg.eigvalsh(blocks)
    return float(np.max(np.maximum(1.0 - w[:, 0], w[:, -1] - 1.0)))


def _block_specnorm_max(gram: np.ndarray, lefts: np.ndarray, rights: np.ndarray) -> float:
    """Max spectral norm of Gram blocks ``gram[T1, T2]`` over stacked pairs."""
    blocks = gram[lefts[:, :, None], rights[:, None, :]]
    outer = blocks @ np.swapaxes(blocks, 1, 2)
    w = np.linalg.eigvalsh(outer)
    return float(np.sqrt(max(np.max(w[:, -1]), 0.0)))


def delta_exhaustive(
    A: MeasurementMatrix, S: int, budget: int = DEFAULT_SUBSET_BUDGET
) -> float:
    """Exact S-restricted isometry constant by enumerating all size-S subsets."""
    if S < 0 or S > A.m:
        raise ValueError(f"S={S} out of range [0, {A.m}]")
    if S == 0:
        return 0.0
    count = _subset_count(A.m, S)
    if count > budget:
        raise EnumerationBudgetExceeded(
            f"C({A.m},{S}) = {count} subsets exceeds budget {budget}"
        )
    gram = A.gram()
    worst = 0.0
    for block in _iter_chunks(combinations(range(A.m), S), _CHUNK):
        worst = max(worst, _gram_deviation_max(gram, np.asarray(block, dtype=np.intp)))
    return worst


def theta_exhaustive(
    A: MeasurementMatrix, S: int, Sp: int, budget: int = DEFAULT_SUBSET_BUDGET
) -> float:
    """Exact restricted orthogonality constant over all disjoint subset pairs
    of sizes (S, Sp)."""
    if S < 0 or Sp < 0:
        raise ValueError("subset sizes must be nonnegative")
    if S + Sp > A.m:
        raise ValueError(f"S + Sp = {S + Sp} exceeds m = {A.m}")
    if S == 0 or Sp == 0:
        return 0.0
    count = _subset_count(A.m, S) * _subset_count(A.m - S, Sp)
    if S == Sp:
        count //= 2  # unordered pairs; the block norm is symmetric
    if count > budget:
        raise EnumerationBudgetExceeded(
            f"{count} disjoint subset pairs exceeds budget {budget}"
        )
    gram = A.gram()

    def pairs() -> Iterator[tuple[tuple, tuple]]:
        for t1 in combinations(range(A.m), S):
            first = set(t1)
            rest = [i for i in range(A.m) if i not in first]
            for t2 in combinations(rest, Sp):
                if S == Sp and t2 < t1:
                    continue
                yield t1, t2

    worst = 0.0
    for block in _iter_chunks(pairs(), _CHUNK):
        lefts = np.asarray([p[0] for p in block], dtype=np.intp)
        rights = np.asarray([p[1] for p in block], dtype=np.intp)
        worst = max(worst, _block_specnorm_max(gram, lefts, rights))
    return worst


def delta_sampled(A: MeasurementMatrix, S: int, trials: int, seed: int) -> float:
    """Lower bound on the isometry constant from random size-S subsets."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if S < 0 or S > A.m:
        raise ValueError(f"S={S} out of range [0, {A.m}]")
    if S == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    gram = A.gram()
    subsets = np.empty((trials, S), dtype=np.intp)
    for k in range(trials):
        subsets[k] = rng.choice(A.m, size=S, replace=False)
    worst = 0.0
    for lo in range(0, trials, _CHUNK):
        worst = max(worst, _gram_deviation_max(gram, subsets[lo:lo + _CHUNK]))
    return worst


def theta_sampled(A: MeasurementMatrix, S: int, Sp: int, trials: int, seed: int) -> float:
    """Lower bound on the orthogonality constant from random disjoint pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if S + Sp > A.m:
        raise ValueError(f"S + Sp = {S + Sp} exceeds m = {A.m}")
    if S == 0 or Sp == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    gram = A.gram()
    lefts = np.empty((trials, S), dtype=np.intp)
    rights = np.empty((trials, Sp), dtype=np.intp)
    for k in range(trials):
        perm = rng.permutation(A.m)
        lefts[k] = perm[:S]
        rights[k] = perm[S:S + Sp]
    worst = 0.0
    for lo in range(0, trials, _CHUNK):
        worst = max(worst, _block_specnorm_max(gram, lefts[lo:lo + _CHUNK], rights[lo:lo + _CHUNK]))
    return worst


@dataclass(frozen=True)
class RipEntry:
    value: float
    exact: bool


class RipTable:
    """Isometry and orthogonality constants for one matrix, with provenance.

    Entries flagged ``exact=False`` came from subset sampling and are lower
    bounds on the true constants; every consumer must propagate that flag so
    downstream reports can be marked optimistic.
    """

    def __init__(self, matrix_digest: str = ""):
        self.matrix_digest = matrix_digest
        self._delta: dict[int, RipEntry] = {}
        self._theta: dict[tuple[int, int], RipEntry] = {}

    # -- writes ---------------------------------------------------------

    def set_delta(self, S: int, value: float, exact: bool) -> None:
        self._delta[int(S)] = RipEntry(float(value), bool(exact))

    def set_theta(self, S: int, Sp: int, value: float, exact: bool) -> None:
        self._theta[(int(S), int(Sp))] = RipEntry(float(value), bool(exact))

    # -- reads ----------------------------------------------------------

    def has_delta(self, S: int) -> bool:
        return S == 0 or S in self._delta

    def has_theta(self, S: int, Sp: int) -> bool:
        return S == 0 or Sp == 0 or (S, Sp) in self._theta

    def delta(self, S: int) -> RipEntry:
        if S == 0:
            return RipEntry(0.0, True)
        try:
            return self._delta[S]
        except KeyError:
            raise InsufficientRipTable(f"delta_{S} missing from table") from None

    def theta(self, S: int, Sp: int) -> RipEntry:
        if S == 0 or Sp == 0:
            return RipEntry(0.0, True)
        try:
            return self._theta[(S, Sp)]
        except KeyError:
            raise InsufficientRipTable(f"theta_{{{S},{Sp}}} missing from table") from None

    @property
    def delta_entries(self) -> dict[int, RipEntry]:
        return dict(self._delta)

    @property
    def theta_entries(self) -> dict[tuple[int, int], RipEntry]:
        return dict(self._theta)

    def validate_monotone(self) -> None:
        """Check the defining-maxima monotonicity across stored entries."""
        sizes = sorted(self._delta)
        for a, b in zip(sizes, sizes[1:]):
            if self._delta[a].value > self._delta[b].value + 1e-12:
                raise ValueError(f"delta not monotone: delta_{a} > delta_{b}")
        for (s, sp), e in self._theta.items():
            for (s2, sp2), e2 in self._theta.items():
                if s2 >= s and sp2 >= sp and e2.value < e.value - 1e-12:
                    raise ValueError(
                        f"theta not monotone: theta_{{{s},{sp}}} > theta_{{{s2},{sp2}}}"
                    )

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "matrix_digest": self.matrix_digest,
            "delta": {str(s): [e.value, e.exact] for s, e in sorted(self._delta.items())},
            "theta": {
                f"{s},{sp}": [e.value, e.exact]
                for (s, sp), e in sorted(self._theta.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RipTable":
        table = cls(doc.get("matrix_digest", ""))
        for s, (value, exact) in doc.get("delta", {}).items():
            table.set_delta(int(s), value, exact)
        for key, (value, exact) in doc.get("theta", {}).items():
            s, sp = key.split(",")
            table.set_theta(int(s), int(sp), value, exact)
        return table

    @classmethod
    def from_json(cls, text: str) -> "RipTable":
        return cls.from_json_dict(json.loads(text))


def build_rip_table(
    A: MeasurementMatrix,
    delta_sizes: Sequence[int],
    theta_pairs: Iterable[tuple[int, int]],
    mode: str = "exact",
    budget: int = DEFAULT_SUBSET_BUDGET,
    trials: int = 2000,
    seed: int = 0,
) -> RipTable:
    """Populate a table with the requested constants.

    ``mode="exact"`` enumerates (raises if over budget); ``mode="sampled"``
    maximises over ``trials`` random subsets per entry and then tightens the
    lower bounds using monotonicity (a running max over increasing sizes is
    still a lower bound on a monotone quantity).
    """
    if mode not in ("exact", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    table = RipTable(A.digest())
    exact = mode == "exact"
    running = 0.0
    for k, s in enumerate(sorted(set(int(s) for s in delta_sizes if s > 0))):
        if exact:
            table.set_delta(s, delta_exhaustive(A, s, budget=budget), True)
        else:
            running = max(running, delta_sampled(A, s, trials, seed + 17 * k))
            table.set_delta(s, running, False)
    pairs = sorted({(int(s), int(sp)) for s, sp in theta_pairs if s > 0 and sp > 0})
    values: dict[tuple[int, int], float] = {}
    for k, (s, sp) in enumerate(pairs):
        if exact:
            values[(s, sp)] = theta_exhaustive(A, s, sp, budget=budget)
        else:
            v = theta_sampled(A, s, sp, trials, seed + 1009 + 31 * k)
            # tighten with monotonicity over already-computed dominated pairs
            for (s2, sp2), v2 in values.items():
                if s2 <= s and sp2 <= sp:
                    v = max(v, v2)
            values[(s, sp)] = v
    for (s, sp), v in values.items():
        table.set_theta(s, sp, v, exact)
    return table


def s_star_s_starstar(rip: RipTable, scan_limit: int) -> tuple[int, int]:
    """Support-size thresholds under which the error bounds operate.

    Returns ``(s_star, s_starstar)`` scanned up to ``scan_limit``:
    ``s_star`` is the largest S with ``delta_S < 1/2`` and ``s_starstar`` the
    largest S with ``delta_2S + theta_{S,2S} < 1``.  Either is 0 when the
    condition already fails at S=1.  Raises :class:`InsufficientRipTable` if
    an entry is missing before the scan resolves.
    """
    if scan_limit < 1:
        raise ValueError("scan_limit must be >= 1")
    s_star = 0
    for s in range(1, scan_limit + 1):
        if not rip.has_delta(s):
            raise InsufficientRipTable(f"delta_{s} missing (s_star scan)")
        if rip.delta(s).value < 0.5:
            s_star = s
        else:
            break
    s_starstar = 0
    for s in range(1, scan_limit + 1):
        if not (rip.has_delta(2 * s) and rip.has_theta(s, 2 * s)):
            raise InsufficientRipTable(
                f"delta_{2*s} or theta_{{{s},{2*s}}} missing (s_starstar scan)"
            )
        if rip.delta(2 * s).value + rip.theta(s, 2 * s).value < 1.0:
            s_starstar = s
        else:
            break
    return s_star, s_starstar

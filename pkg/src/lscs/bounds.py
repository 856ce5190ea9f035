"""Closed-form error bounds, stability conditions, and runtime predicates.

Everything here is a pure function of isometry/orthogonality constants, sizes,
and norms.  Each bound returns a :class:`BoundResult` carrying an explicit
applicability verdict instead of NaN: a bound whose hypotheses cannot be
verified is reported as not applicable, never silently evaluated.

Provenance matters: constants obtained by subset sampling are lower bounds on
the true ones, so any bound computed from them may be too small.  Such results
are flagged ``optimistic`` and soundness is only ever asserted for exact
inputs.

Max-over-sizes expressions (the detection threshold and the stability gate)
are evaluated by explicit enumeration of integer ``(|T|, |Delta|)`` pairs up
to the stated caps.  The detection ratio is not monotone in ``|Delta|``, so no
shortcut is taken; enumerating the full rectangle also covers both the
fixed-``S_T`` and the max-over-``|T|`` readings of the stability conditions,
whichever is worse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .filter import FilterConfig, StepDiagnostics
from .measurement import InsufficientRipTable, RipTable
from .sigmodel import SignalModelParams

_NOISE_TOL = 1e-12
_MULTISET_CAP = 100_000


@dataclass(frozen=True)
class BoundContext:
    """Shared inputs every bound needs.

    ``noise_linf_bound`` is the modeled bound on ``||w||_inf``; no bound is
    applicable unless it is at most ``lam / norm_A_1``.
    """

    rip: RipTable
    n: int
    m: int
    lam: float
    norm_A_1: float
    noise_linf_bound: float

    def noise_budget_ok(self) -> bool:
        return self.noise_linf_bound <= self.lam / self.norm_A_1 + _NOISE_TOL

    def w_max_sq(self) -> float:
        """Largest possible ||w||^2 under the l-inf budget: n lam^2 / ||A||_1^2."""
        return self.n * self.lam ** 2 / self.norm_A_1 ** 2


@dataclass
class BoundResult:
    value: float | None
    applicable: bool
    optimistic: bool = False
    argmin_s: int | None = None
    reasons: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)


class RecoveryConstants(NamedTuple):
    c2: float
    c3: float
    exact: bool


def recovery_constants(S: int, rip: RipTable) -> RecoveryConstants:
    """Constants of the sparse-compressible recovery bound at sparsity S.

    ``c2 = 48 / (1 - delta_2S - theta_{S,2S})^2`` and
    ``c3 = 8 + 24 theta_{S,2S}^2 / (1 - delta_2S - theta_{S,2S})^2``.
    Raises ``ValueError`` when the denominator is not positive.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    d = rip.delta(2 * S)
    th = rip.theta(S, 2 * S)
    gap = 1.0 - d.value - th.value
    if gap <= 0:
        raise ValueError(f"delta_{2*S} + theta_{{{S},{2*S}}} >= 1: constants undefined")
    c2 = 48.0 / gap ** 2
    c3 = 8.0 + 24.0 * th.value ** 2 / gap ** 2
    return RecoveryConstants(c2, c3, d.exact and th.exact)


def residual_bias_sqnorm_bound(
    theta_T_Delta: float, delta_T: float, x_Delta_sqnorm: float, w_sqnorm: float
) -> float:
    """Bound on the squared norm of the residual bias along the known support:
    ``2 theta^2/(1-delta)^2 ||x_Delta||^2 + 2/(1-delta) ||w||^2``."""
    if delta_T >= 1:
        raise ValueError("delta_T must be < 1")
    return (
        2.0 * theta_T_Delta ** 2 / (1.0 - delta_T) ** 2 * x_Delta_sqnorm
        + 2.0 / (1.0 - delta_T) * w_sqnorm
    )


def _smallest_sqnorm(values: np.ndarray, k: int) -> float:
    """Sum of squares of the k smallest-magnitude entries."""
    if k <= 0:
        return 0.0
    mags = np.sort(np.abs(np.asarray(values, dtype=float)))
    return float(np.sum(mags[:k] ** 2))


def _check_t_within_s_star(ctx: BoundContext, size_T: int) -> tuple[bool, bool]:
    """(|T| <= S*) == (delta_{|T|} < 1/2); returns (holds, exact)."""
    if size_T == 0:
        return True, True
    e = ctx.rip.delta(size_T)
    return e.value < 0.5, e.exact


def _check_delta_within_s_starstar(ctx: BoundContext, size_delta: int) -> tuple[bool, bool]:
    """(|Delta| <= S**) == (delta_{2|Delta|} + theta_{|Delta|,2|Delta|} < 1)."""
    if size_delta == 0:
        return True, True
    d = ctx.rip.delta(2 * size_delta)
    th = ctx.rip.theta(size_delta, 2 * size_delta)
    return d.value + th.value < 1.0, d.exact and th.exact


def _admissible_s_scan(ctx: BoundContext, cap: int) -> tuple[int, bool]:
    """Largest prefix 1..S with defined recovery constants, capped.

    Restricting the scan below the true threshold only discards candidate
    values of the minimum, which keeps every bound valid (possibly looser).
    Returns (limit, exact_flags_of_entries_used).
    """
    limit = 0
    exact = True
    for s in range(1, cap + 1):
        if not (ctx.rip.has_delta(2 * s) and ctx.rip.has_theta(s, 2 * s)):
            break
        d = ctx.rip.delta(2 * s)
        th = ctx.rip.theta(s, 2 * s)
        if d.value + th.value >= 1.0:
            break
        limit = s
        exact = exact and d.exact and th.exact
    return limit, exact


def residual_recovery_bound(
    ctx: BoundContext,
    size_T: int,
    x_delta: np.ndarray,
    w_sqnorm: float,
) -> BoundResult:
    """Recovery error bound for the residual-based estimate.

    Minimises ``C2(S) S lam^2 + C3(S) ((|T|+|Delta|-S)/S) B(S)`` over
    admissible S, where ``B(S) = 8 theta^2 ||x_Delta||^2 + 4 ||w||^2`` plus
    the energy of the ``|Delta|-S`` smallest entries of ``x_Delta`` when
    ``S < |Delta|``.  ``theta`` is taken at ``(|T|, |Delta|)``.
    """
    x_delta = np.asarray(x_delta, dtype=float)
    size_delta = int(x_delta.size)
    res = BoundResult(None, False)
    if not ctx.noise_budget_ok():
        res.reasons.append("noise bound exceeds lam/||A||_1")
        return res
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, size_T)
    except InsufficientRipTable as exc:
        res.reasons.append(str(exc))
        return res
    if not t_ok:
        res.reasons.append(f"|T|={size_T} exceeds S* (delta_{size_T} >= 1/2)")
        return res
    try:
        theta = ctx.rip.theta(size_T, size_delta)
    except InsufficientRipTable as exc:
        res.reasons.append(str(exc))
        return res
    cap = size_T + size_delta
    s_hi, scan_exact = _admissible_s_scan(ctx, cap)
    if s_hi < 1:
        res.reasons.append("no admissible S (recovery constants undefined at S=1)")
        return res

    xd_sq = float(np.sum(x_delta ** 2))
    exact = t_exact and theta.exact and scan_exact
    best = math.inf
    best_s = None
    for s in range(1, s_hi + 1):
        cc = recovery_constants(s, ctx.rip)
        exact = exact and cc.exact
        b = 8.0 * theta.value ** 2 * xd_sq + 4.0 * w_sqnorm
        if s < size_delta:
            b += _smallest_sqnorm(x_delta, size_delta - s)
        f = cc.c2 * s * ctx.lam ** 2 + cc.c3 * (cap - s) / s * b
        if f < best:
            best, best_s = f, s
    res.value = best
    res.applicable = True
    res.optimistic = not exact
    res.argmin_s = best_s
    res.details = {"scan_cap": s_hi, "theta": theta.value}
    return res


def simplified_residual_bound(
    ctx: BoundContext, size_T: int, size_delta: int, x_delta_sqnorm: float
) -> BoundResult:
    """Single-S form of the recovery bound: ``C' + C'' theta^2 ||x_Delta||^2``.

    ``C'`` and ``C''`` are returned in ``details``; requires ``|Delta| >= 1``.
    """
    res = BoundResult(None, False)
    if size_delta < 1:
        res.reasons.append("this branch needs |Delta| >= 1; use the B0 bound instead")
        return res
    if not ctx.noise_budget_ok():
        res.reasons.append("noise bound exceeds lam/||A||_1")
        return res
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, size_T)
        d_ok, d_exact = _check_delta_within_s_starstar(ctx, size_delta)
        theta = ctx.rip.theta(size_T, size_delta)
    except InsufficientRipTable as exc:
        res.reasons.append(str(exc))
        return res
    if not t_ok:
        res.reasons.append(f"|T|={size_T} exceeds S*")
        return res
    if not d_ok:
        res.reasons.append(f"|Delta|={size_delta} exceeds S**")
        return res
    cc = recovery_constants(size_delta, ctx.rip)
    c_prime = cc.c2 * size_delta * ctx.lam ** 2 + 4.0 * cc.c3 * (size_T / size_delta) * ctx.w_max_sq()
    c_dprime = 8.0 * cc.c3 * size_T
    res.value = c_prime + c_dprime * theta.value ** 2 * x_delta_sqnorm
    res.applicable = True
    res.optimistic = not (t_exact and d_exact and theta.exact and cc.exact)
    res.details = {"c_prime": c_prime, "c_double_prime": c_dprime, "theta": theta.value}
    return res


def no_miss_residual_bound(ctx: BoundContext, size_T: int) -> BoundResult:
    """Recovery bound when nothing is missing from the known support.

    ``min_S [C2(S) S lam^2 + C3(S) ((|T|-S)/S) 4 n lam^2/||A||_1^2]`` over
    admissible ``S <= |T|``.  (The minimum is restricted to ``S <= |T|``:
    those are the values the underlying sparse-compressible bound admits for a
    ``|T|``-sparse error, and larger S would make the second term negative.)
    """
    res = BoundResult(None, False)
    if not ctx.noise_budget_ok():
        res.reasons.append("noise bound exceeds lam/||A||_1")
        return res
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, size_T)
    except InsufficientRipTable as exc:
        res.reasons.append(str(exc))
        return res
    if not t_ok:
        res.reasons.append(f"|T|={size_T} exceeds S*")
        return res
    s_hi, scan_exact = _admissible_s_scan(ctx, size_T)
    if s_hi < 1:
        res.reasons.append("no admissible S")
        return res
    exact = t_exact and scan_exact
    best, best_s = math.inf, None
    for s in range(1, s_hi + 1):
        cc = recovery_constants(s, ctx.rip)
        exact = exact and cc.exact
        f = cc.c2 * s * ctx.lam ** 2 + cc.c3 * (size_T - s) / s * 4.0 * ctx.w_max_sq()
        if f < best:
            best, best_s = f, s
    res.value = best
    res.applicable = True
    res.optimistic = not exact
    res.argmin_s = best_s
    return res


def one_shot_recovery_bound(ctx: BoundContext, x_on_N: np.ndarray) -> BoundResult:
    """One-shot (no prior support) recovery bound for comparison:
    ``min_S [C2 S lam^2 + C3 ((|N|-S)/S) ||x_N(|N|-S)||^2]``."""
    x_on_N = np.asarray(x_on_N, dtype=float)
    size_N = int(x_on_N.size)
    res = BoundResult(None, False)
    if not ctx.noise_budget_ok():
        res.reasons.append("noise bound exceeds lam/||A||_1")
        return res
    s_hi, scan_exact = _admissible_s_scan(ctx, size_N)
    if s_hi < 1:
        res.reasons.append("no admissible S")
        return res
    exact = scan_exact
    best, best_s = math.inf, None
    for s in range(1, s_hi + 1):
        cc = recovery_constants(s, ctx.rip)
        exact = exact and cc.exact
        f = cc.c2 * s * ctx.lam ** 2 + cc.c3 * (size_N - s) / s * _smallest_sqnorm(x_on_N, size_N - s)
        if f < best:
            best, best_s = f, s
    res.value = best
    res.applicable = True
    res.optimistic = not exact
    res.argmin_s = best_s
    return res


def compressibility_residual_bound(
    ctx: BoundContext, size_T: int, size_delta: int, x_delta_sqnorm: float, b: float
) -> BoundResult:
    """Tighter recovery bound whose leading term does not grow with ``|T|``.

    The caller must have verified the residual-compressibility condition:
    ``||A_T^+ A_Delta||_1 < c`` and ``||x_Delta||_1`` large enough, for the
    supplied ``b > c``.  With ``|Delta| = 0`` that condition cannot hold and
    the B0 bound is returned instead.
    """
    if size_delta == 0:
        res = no_miss_residual_bound(ctx, size_T)
        res.reasons.append("|Delta|=0: fell back to the B0 bound")
        return res
    res = BoundResult(None, False)
    if not ctx.noise_budget_ok():
        res.reasons.append("noise bound exceeds lam/||A||_1")
        return res
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, size_T)
        d_ok, d_exact = _check_delta_within_s_starstar(ctx, size_delta)
        theta = ctx.rip.theta(size_T, size_delta)
    except InsufficientRipTable as exc:
        res.reasons.append(str(exc))
        return res
    if not t_ok:
        res.reasons.append(f"|T|={size_T} exceeds S*")
        return res
    if not d_ok:
        res.reasons.append(f"|Delta|={size_delta} exceeds S**")
        return res
    cc = recovery_constants(size_delta, ctx.rip)
    second = cc.c3 * min(
        b ** 2 * x_delta_sqnorm,
        8.0 * size_T * theta.value ** 2 * x_delta_sqnorm + 4.0 * size_T * ctx.w_max_sq(),
    )
    res.value = cc.c2 * size_delta * ctx.lam ** 2 + second
    res.applicable = True
    res.optimistic = not (t_exact and d_exact and theta.exact and cc.exact)
    return res


# ---------------------------------------------------------------------------
# detection / deletion condition machinery
# ---------------------------------------------------------------------------


def _c_prime_dprime(ctx: BoundContext, size_T: int, size_delta: int, cc: RecoveryConstants) -> tuple[float, float]:
    c_prime = cc.c2 * size_delta * ctx.lam ** 2 + 4.0 * cc.c3 * (size_T / size_delta) * ctx.w_max_sq()
    c_dprime = 8.0 * cc.c3 * size_T
    return c_prime, c_dprime


@dataclass
class DetectionCondition:
    applicable: bool
    gate_holds: bool          # 2 theta^2 |Delta| C'' < 1 at every enumerated pair
    threshold_sq: float       # squared magnitude guaranteeing detection
    optimistic: bool
    reasons: list[str] = field(default_factory=list)
    worst_pair: tuple[int, int] | None = None


def detection_condition(
    ctx: BoundContext, S_T: int, S_Delta: int, alpha: float
) -> DetectionCondition:
    """Detection guarantee threshold.

    Enumerates every ``(|T|, |Delta|)`` with ``|T| <= S_T`` and
    ``1 <= |Delta| <= S_Delta`` and returns whether the gate
    ``2 theta^2 |Delta| C'' < 1`` holds at all of them, together with the max
    of ``(2 alpha^2 + 2 C') / (1 - 2 theta^2 |Delta| C'')``.  Any undetected
    true coefficient whose squared magnitude exceeds the threshold is
    guaranteed to be detected this step.
    """
    out = DetectionCondition(False, False, math.inf, False)
    if S_Delta < 1:
        out.reasons.append("no undetected coefficients to consider (S_Delta = 0)")
        return out
    if not ctx.noise_budget_ok():
        out.reasons.append("noise bound exceeds lam/||A||_1")
        return out
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, S_T)
        d_ok, d_exact = _check_delta_within_s_starstar(ctx, S_Delta)
    except InsufficientRipTable as exc:
        out.reasons.append(str(exc))
        return out
    if not t_ok:
        out.reasons.append(f"S_T={S_T} exceeds S*")
        return out
    if not d_ok:
        out.reasons.append(f"S_Delta={S_Delta} exceeds S**")
        return out

    exact = t_exact and d_exact
    gate_ok = True
    worst = -math.inf
    worst_pair = None
    try:
        for d_sz in range(1, S_Delta + 1):
            cc = recovery_constants(d_sz, ctx.rip)
            exact = exact and cc.exact
            for t_sz in range(0, S_T + 1):
                if t_sz + d_sz > ctx.m:
                    continue
                theta = ctx.rip.theta(t_sz, d_sz)
                exact = exact and theta.exact
                c_prime, c_dprime = _c_prime_dprime(ctx, t_sz, d_sz, cc)
                gate = 2.0 * theta.value ** 2 * d_sz * c_dprime
                if gate >= 1.0:
                    gate_ok = False
                    worst_pair = (t_sz, d_sz)
                    continue
                ratio = (2.0 * alpha ** 2 + 2.0 * c_prime) / (1.0 - gate)
                if ratio > worst:
                    worst, worst_pair = ratio, (t_sz, d_sz)
    except InsufficientRipTable as exc:
        out.reasons.append(str(exc))
        return out
    out.applicable = True
    out.gate_holds = gate_ok
    out.threshold_sq = worst if gate_ok else math.inf
    out.optimistic = not exact
    out.worst_pair = worst_pair
    return out


@dataclass
class DeletionCondition:
    applicable: bool
    threshold_sq: float
    optimistic: bool
    reasons: list[str] = field(default_factory=list)


def _deletion_family(
    ctx: BoundContext,
    S_T: int,
    S_Delta: int,
    det_misses_count: int,
    det_misses_linf: float,
    alpha_del: float | None,
) -> DeletionCondition:
    out = DeletionCondition(False, math.inf, False)
    if not ctx.noise_budget_ok():
        out.reasons.append("noise bound exceeds lam/||A||_1")
        return out
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, S_T)
        theta = ctx.rip.theta(S_T, S_Delta)
    except InsufficientRipTable as exc:
        out.reasons.append(str(exc))
        return out
    if not t_ok:
        out.reasons.append(f"S_T={S_T} exceeds S*")
        return out
    coupling = theta.value ** 2 * det_misses_count * det_misses_linf ** 2
    if alpha_del is None:
        # deletion condition: smallest alpha_del^2 that flushes every extra
        out.threshold_sq = 4.0 * ctx.w_max_sq() + 8.0 * coupling
    else:
        # no-false-deletion condition: squared magnitude that survives deletion
        out.threshold_sq = 2.0 * alpha_del ** 2 + 8.0 * ctx.w_max_sq() + 16.0 * coupling
    out.applicable = True
    out.optimistic = not (t_exact and theta.exact)
    return out


def no_false_deletion_condition(
    ctx: BoundContext,
    S_T: int,
    S_Delta: int,
    det_misses_count: int,
    det_misses_linf: float,
    alpha_del: float,
) -> DeletionCondition:
    """Threshold above which a true detected coefficient cannot be deleted:
    ``2 alpha_del^2 + 8 n lam^2/||A||_1^2 + 16 theta^2 |misses| linf^2``."""
    return _deletion_family(ctx, S_T, S_Delta, det_misses_count, det_misses_linf, alpha_del)


def deletion_condition(
    ctx: BoundContext,
    S_T: int,
    S_Delta: int,
    det_misses_count: int,
    det_misses_linf: float,
) -> DeletionCondition:
    """Smallest ``alpha_del^2`` guaranteeing every extra is deleted:
    ``4 n lam^2/||A||_1^2 + 8 theta^2 |misses| linf^2``."""
    return _deletion_family(ctx, S_T, S_Delta, det_misses_count, det_misses_linf, None)


# ---------------------------------------------------------------------------
# stability condition checker
# ---------------------------------------------------------------------------


@dataclass
class ConditionRow:
    identifier: str
    holds: bool
    lhs: float | None
    rhs: float | None
    inputs: dict = field(default_factory=dict)
    exact: bool = True
    assumed: bool = False
    note: str = ""

    def to_json_dict(self) -> dict:
        return {
            "identifier": self.identifier,
            "holds": self.holds,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "inputs": self.inputs,
            "exact": self.exact,
            "assumed": self.assumed,
            "note": self.note,
        }


@dataclass
class ConditionReport:
    rows: list[ConditionRow]
    holds: bool
    optimistic: bool
    f: int
    d0: int

    def row(self, identifier: str) -> ConditionRow:
        for r in self.rows:
            if r.identifier == identifier:
                return r
        raise KeyError(identifier)

    def to_json_dict(self) -> dict:
        return {
            "holds": self.holds,
            "optimistic": self.optimistic,
            "f": self.f,
            "d0": self.d0,
            "rows": [r.to_json_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def prescribed_alpha_del(ctx: BoundContext) -> float:
    """Deletion threshold the stability analysis fixes: ``2 sqrt(n) lam / ||A||_1``."""
    return 2.0 * math.sqrt(ctx.n) * ctx.lam / ctx.norm_A_1


def _rate_multisets(rates: np.ndarray, k: int) -> list[tuple[float, ...]]:
    """Distinct descending k-multisets drawable from the rate vector.

    The stability conditions quantify over every possible addition set, and
    only the multiset of rates matters.
    """
    if k == 0:
        return [()]
    values, counts = np.unique(np.asarray(rates, dtype=float), return_counts=True)
    out: list[tuple[float, ...]] = []

    def rec(idx: int, remaining: int, chosen: list[float]):
        if len(out) > _MULTISET_CAP:
            raise ValueError("too many distinct rate multisets to enumerate")
        if remaining == 0:
            out.append(tuple(sorted(chosen, reverse=True)))
            return
        if idx == len(values):
            return
        take_max = min(int(counts[idx]), remaining)
        for take in range(take_max, -1, -1):
            rec(idx + 1, remaining - take, chosen + [values[idx]] * take)

    rec(0, k, [])
    return out


def required_rip_entries(
    model: SignalModelParams, f: int, d0: int
) -> tuple[list[int], list[tuple[int, int]]]:
    """All (delta, theta) table entries the stability checker and the
    stability error caps will look up."""
    s0, sa, m = model.s0, model.sa, model.m
    st_max = s0 + f * (d0 + sa)
    deltas: set[int] = {st_max}
    thetas: set[tuple[int, int]] = set()
    # recovery-constant scan entries for the error caps
    for s in range(1, st_max + 1):
        if 2 * s <= m and 3 * s <= m:
            deltas.add(2 * s)
            thetas.add((s, 2 * s))
    if sa > 0:
        deltas.add(2 * sa)
        thetas.add((sa, 2 * sa))
    for d_sz in range(1, sa + 1):
        deltas.add(2 * d_sz)
        thetas.add((d_sz, 2 * d_sz))
    for i in range(1, sa + 1):
        st_i = s0 + f * (d0 + i - 1)
        sd_i = sa - i + 1
        deltas.add(st_i)
        for d_sz in range(1, sd_i + 1):
            for t_sz in range(1, st_i + 1):
                if t_sz + d_sz <= m:
                    thetas.add((t_sz, d_sz))
        st_b = s0 + f * (d0 + i)
        sd_b = sa - i
        if sd_b > 0 and st_b + sd_b <= m:
            thetas.add((st_b, sd_b))
        deltas.add(st_b)
    for d_sz in range(1, sa + 1):
        for t_sz in range(1, st_max + 1):
            if t_sz + d_sz <= m:
                thetas.add((t_sz, d_sz))
    if sa > 0 and st_max + sa <= m:
        thetas.add((st_max, sa))
    return sorted(deltas), sorted(thetas)


def check_stability_conditions(
    model: SignalModelParams,
    ctx: BoundContext,
    f: int,
    d0: int,
    alpha: float,
    alpha_del: float | None = None,
) -> ConditionReport:
    """Evaluate the stability conditions for given ``f`` and ``d0``.

    ``f`` (false detections per step) is an input assumption tied to the
    choice of the detection threshold, not something derived here.  When
    ``alpha_del`` is omitted the prescribed ``2 sqrt(n) lam/||A||_1`` is used,
    which makes the threshold condition hold by construction.
    """
    if d0 < 1 or d0 >= model.d:
        raise ValueError("need 1 <= d0 < d")
    if f < 0:
        raise ValueError("f must be nonnegative")
    need_delta, need_theta = required_rip_entries(model, f, d0)
    missing = [f"delta_{s}" for s in need_delta if not ctx.rip.has_delta(s)]
    missing += [
        f"theta_{{{s},{sp}}}" for s, sp in need_theta if not ctx.rip.has_theta(s, sp)
    ]
    if missing:
        raise InsufficientRipTable("table lacks entries: " + ", ".join(missing))
    prescribed = prescribed_alpha_del(ctx)
    if alpha_del is None:
        alpha_del = prescribed
    rows: list[ConditionRow] = []
    sa, s0 = model.sa, model.s0
    st_max = s0 + f * (d0 + sa)

    rows.append(ConditionRow(
        "initialization", True, None, None, assumed=True,
        note="support estimate assumed exact at t=0",
    ))
    rows.append(ConditionRow(
        "deletion-threshold",
        bool(math.isclose(alpha_del, prescribed, rel_tol=1e-9, abs_tol=1e-12)),
        alpha_del, prescribed,
        note="stability analysis fixes alpha_del = 2 sqrt(n) lam / ||A||_1",
    ))
    rows.append(ConditionRow(
        "false-detect-budget", True, None, float(f), assumed=True,
        note="at most f false detections per step is an assumption on alpha",
    ))

    noise_rhs = ctx.lam / ctx.norm_A_1
    rows.append(ConditionRow(
        "noise-budget", bool(ctx.noise_linf_bound <= noise_rhs + _NOISE_TOL),
        ctx.noise_linf_bound, noise_rhs,
    ))
    sa_ok, sa_exact = _check_delta_within_s_starstar(ctx, sa)
    sa_lhs = None
    if sa > 0:
        sa_lhs = ctx.rip.delta(2 * sa).value + ctx.rip.theta(sa, 2 * sa).value
    rows.append(ConditionRow(
        "addition-count-within-recovery-range", bool(sa_ok), sa_lhs, 1.0, exact=sa_exact,
        note="S_a <= S**",
    ))
    st_ok, st_exact = _check_t_within_s_star(ctx, st_max)
    rows.append(ConditionRow(
        "support-size-within-ls-range", bool(st_ok), ctx.rip.delta(st_max).value if st_max else 0.0,
        0.5, exact=st_exact,
        inputs={"S_T": st_max},
        note="S_0 + f (d_0 + S_a) <= S*",
    ))

    # detection gate over the enumerated rectangle at (S_T, S_Delta) = (st_max, sa)
    gate_lhs = 0.0
    gate_exact = True
    gate_inputs = {"S_T": st_max, "S_Delta": sa}
    if sa > 0:
        for d_sz in range(1, sa + 1):
            cc = recovery_constants(d_sz, ctx.rip) if _check_delta_within_s_starstar(ctx, d_sz)[0] else None
            if cc is None:
                gate_lhs = math.inf
                break
            gate_exact = gate_exact and cc.exact
            for t_sz in range(0, st_max + 1):
                if t_sz + d_sz > ctx.m:
                    continue
                theta = ctx.rip.theta(t_sz, d_sz)
                gate_exact = gate_exact and theta.exact
                _, c_dprime = _c_prime_dprime(ctx, t_sz, d_sz, cc)
                gate_lhs = max(gate_lhs, 2.0 * theta.value ** 2 * d_sz * c_dprime)
    rows.append(ConditionRow(
        "detection-gate", bool(gate_lhs < 1.0), gate_lhs, 1.0, exact=gate_exact, inputs=gate_inputs,
    ))

    multisets = _rate_multisets(model.rates, sa)
    big_m = model.big_m

    for i in range(1, sa + 1):
        st_i = s0 + f * (d0 + i - 1)
        sd_i = sa - i + 1
        det = detection_condition(ctx, st_i, sd_i, alpha)
        lhs_i = min(
            min(big_m, (d0 + i) * ms[i - 1]) ** 2 for ms in multisets
        )
        holds = det.applicable and det.gate_holds and lhs_i > det.threshold_sq
        rows.append(ConditionRow(
            f"detect-addition-{i}", bool(holds), lhs_i,
            det.threshold_sq if det.applicable else None,
            inputs={"S_T": st_i, "S_Delta": sd_i},
            exact=not det.optimistic if det.applicable else True,
            note="; ".join(det.reasons),
        ))

        st_b = s0 + f * (d0 + i)
        sd_b = sa - i
        theta_b = ctx.rip.theta(st_b, sd_b)
        worst_margin = math.inf
        worst_lhs = worst_rhs = None
        for ms in multisets:
            lhs = min(big_m, (d0 + i) * ms[i - 1]) ** 2
            nxt = ms[i] if i < sa else 0.0
            rhs = (
                2.0 * alpha_del ** 2
                + 8.0 * ctx.w_max_sq()
                + 16.0 * theta_b.value ** 2 * (sa - i) * min(big_m, (d0 + i) * nxt) ** 2
            )
            if lhs - rhs < worst_margin:
                worst_margin, worst_lhs, worst_rhs = lhs - rhs, lhs, rhs
        rows.append(ConditionRow(
            f"keep-addition-{i}", bool(worst_margin > 0), worst_lhs, worst_rhs,
            inputs={"S_T": st_b, "S_Delta": sd_b},
            exact=theta_b.exact,
        ))

    min_rate = float(np.min(model.rates))
    max_rate = float(np.max(model.rates))
    const_lhs = min(big_m, model.d * min_rate) ** 2
    peak = min(big_m, (d0 + sa) * max_rate) ** 2
    theta_c = ctx.rip.theta(st_max, sa)
    rhs5 = (
        2.0 * alpha_del ** 2 + 8.0 * ctx.w_max_sq()
        + 16.0 * theta_c.value ** 2 * sa * peak
    )
    rows.append(ConditionRow(
        "keep-constant-coefficients", bool(const_lhs > rhs5), const_lhs, rhs5,
        inputs={"S_T": st_max, "S_Delta": sa}, exact=theta_c.exact,
    ))
    rhs6 = model.r ** 2 * (2.0 * alpha_del ** 2 + 4.0 * ctx.w_max_sq())
    rows.append(ConditionRow(
        "keep-decreasing-coefficients", bool(const_lhs > rhs6), const_lhs, rhs6,
    ))
    rows.append(ConditionRow(
        "addition-spacing", bool(model.d >= d0 + sa + model.r), float(model.d), float(d0 + sa + model.r),
    ))

    holds = all(r.holds for r in rows if not r.assumed)
    optimistic = any(not r.exact for r in rows)
    return ConditionReport(rows=rows, holds=holds, optimistic=optimistic, f=f, d0=d0)


def find_min_d0(
    model: SignalModelParams,
    ctx: BoundContext,
    f: int,
    alpha: float,
    alpha_del: float | None = None,
) -> tuple[int | None, ConditionReport | None]:
    """Smallest d0 in [1, d-1] passing every condition, or (None, last report)."""
    report = None
    for d0 in range(1, model.d):
        report = check_stability_conditions(model, ctx, f, d0, alpha, alpha_del)
        if report.holds:
            return d0, report
    return None, report


@dataclass
class StabilityErrorCaps:
    applicable: bool
    miss_err_sq: float | None = None
    support_err_sq: float | None = None
    csres_err_cap: float | None = None
    optimistic: bool = False
    reasons: list[str] = field(default_factory=list)


def stability_error_caps(
    model: SignalModelParams, ctx: BoundContext, f: int, d0: int
) -> StabilityErrorCaps:
    """Time-invariant error caps implied by the stability conditions.

    Caller is responsible for having verified those conditions.
    """
    sa, s0 = model.sa, model.s0
    st = s0 + f * (d0 + sa)
    peak = min(model.big_m, (d0 + sa) * float(np.max(model.rates))) ** 2
    out = StabilityErrorCaps(False)
    b0 = no_miss_residual_bound(ctx, st)
    if not b0.applicable:
        out.reasons.extend(b0.reasons)
        return out
    if sa == 0:
        out.applicable = True
        out.miss_err_sq = 0.0
        out.support_err_sq = 4.0 * ctx.w_max_sq()
        out.csres_err_cap = b0.value
        out.optimistic = b0.optimistic
        return out
    try:
        theta = ctx.rip.theta(st, sa)
    except InsufficientRipTable as exc:
        out.reasons.append(str(exc))
        return out
    cor1 = simplified_residual_bound(ctx, st, sa, sa * peak)
    if not cor1.applicable:
        out.reasons.extend(cor1.reasons)
        return out
    out.applicable = True
    out.miss_err_sq = sa * peak
    out.support_err_sq = 8.0 * theta.value ** 2 * sa * peak + 4.0 * ctx.w_max_sq()
    out.csres_err_cap = max(b0.value, cor1.value)
    out.optimistic = b0.optimistic or cor1.optimistic or not theta.exact
    return out


# ---------------------------------------------------------------------------
# per-step guarantee predicates
# ---------------------------------------------------------------------------


def _det_stage_err_sq(diag: StepDiagnostics, x_true: np.ndarray) -> float:
    idx = diag.T_det.to_array()
    d = np.asarray(x_true, dtype=float)[idx] - np.asarray(diag.x_det, dtype=float)[idx]
    return float(d @ d)


def detection_guarantee_violations(
    diag: StepDiagnostics, x_true: np.ndarray, alpha: float
) -> tuple[int, list[int]]:
    """Indices whose detection was guaranteed but did not happen.

    Guarantee: an undetected true coefficient with
    ``x_i^2 > 2 alpha^2 + 2 ||x - x_csres||^2`` lands in the detected support.
    Returns (number of indices meeting the hypothesis, violating indices).
    """
    if diag.x_csres is None or diag.T_det is None or diag.delta_pre is None:
        return 0, []
    thresh = 2.0 * alpha ** 2 + 2.0 * diag.err_csres
    hyp = [i for i in diag.delta_pre if x_true[i] ** 2 > thresh]
    return len(hyp), [i for i in hyp if i not in diag.T_det]


def no_false_deletion_guarantee_violations(
    diag: StepDiagnostics, x_true: np.ndarray, alpha_del: float
) -> tuple[int, list[int]]:
    """True detected coefficients that were guaranteed to survive but were
    deleted.  Guarantee threshold: ``x_i^2 > 2 alpha_del^2 + 2 ||(x -
    x_det)_{T_det}||^2``."""
    if diag.x_det is None or diag.T_det is None or diag.final_support is None:
        return 0, []
    err = _det_stage_err_sq(diag, x_true)
    thresh = 2.0 * alpha_del ** 2 + 2.0 * err
    truth = diag.true_support
    hyp = [i for i in diag.T_det if i in truth and x_true[i] ** 2 > thresh]
    return len(hyp), [i for i in hyp if i not in diag.final_support]


def extras_deletion_guarantee_violations(
    diag: StepDiagnostics, x_true: np.ndarray, alpha_del: float
) -> tuple[int, list[int]]:
    """Extras that were guaranteed to be deleted but survived.

    Guarantee: when ``alpha_del^2 >= ||(x - x_det)_{T_det}||^2`` every index
    of the detected support outside the true support is deleted."""
    if diag.x_det is None or diag.det_extras is None or diag.final_support is None:
        return 0, []
    err = _det_stage_err_sq(diag, x_true)
    if alpha_del ** 2 < err:
        return 0, []
    return len(diag.det_extras), [i for i in diag.det_extras if i in diag.final_support]


def detected_support_ls_error_bound(
    ctx: BoundContext, size_T_det: int, det_misses_sqnorm: float, size_det_misses: int
) -> BoundResult:
    """Bound on the detected-support LS error:
    ``4 n lam^2/||A||_1^2 + 8 theta^2 ||x_misses||^2`` with theta at
    ``(|T_det|, |misses|)``."""
    res = BoundResult(None, False)
    if not ctx.noise_budget_ok():
        res.reasons.append("noise bound exceeds lam/||A||_1")
        return res
    try:
        t_ok, t_exact = _check_t_within_s_star(ctx, size_T_det)
        theta = ctx.rip.theta(size_T_det, size_det_misses)
    except InsufficientRipTable as exc:
        res.reasons.append(str(exc))
        return res
    if not t_ok:
        res.reasons.append(f"|T_det|={size_T_det} exceeds S*")
        return res
    res.value = 4.0 * ctx.w_max_sq() + 8.0 * theta.value ** 2 * det_misses_sqnorm
    res.applicable = True
    res.optimistic = not (t_exact and theta.exact)
    return res


def ls_error_bound_grid(
    ctx: BoundContext, t_sizes: Sequence[int], d_sizes: Sequence[int], linf: float
) -> np.ndarray:
    """Detected-support LS error bound ``4 n lam^2/||A||_1^2 + 8 theta^2 |misses| linf^2``
    over a grid of sizes; used to check it never decreases in either size."""
    grid = np.empty((len(t_sizes), len(d_sizes)))
    for a, t_sz in enumerate(t_sizes):
        for b, d_sz in enumerate(d_sizes):
            theta = ctx.rip.theta(t_sz, d_sz)
            grid[a, b] = 4.0 * ctx.w_max_sq() + 8.0 * theta.value ** 2 * d_sz * linf ** 2
    return grid


def grid_is_monotone(grid: np.ndarray) -> bool:
    return bool(
        np.all(np.diff(grid, axis=0) >= -1e-12) and np.all(np.diff(grid, axis=1) >= -1e-12)
    )


# ---------------------------------------------------------------------------
# per-step predicate bundle used by the simulation harness
# ---------------------------------------------------------------------------


@dataclass
class PredicateTally:
    """Counts of hypothesis-holding steps and violations per predicate."""

    hypotheses: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)

    def add(self, name: str, hyp_count: int, violation_count: int) -> None:
        self.hypotheses[name] = self.hypotheses.get(name, 0) + hyp_count
        self.violations[name] = self.violations.get(name, 0) + violation_count

    def merge(self, other: "PredicateTally") -> None:
        for k, v in other.hypotheses.items():
            self.hypotheses[k] = self.hypotheses.get(k, 0) + v
        for k, v in other.violations.items():
            self.violations[k] = self.violations.get(k, 0) + v

    def total_violations(self) -> int:
        return sum(self.violations.values())


def runtime_step_checks(
    diag: StepDiagnostics,
    x_true: np.ndarray,
    cfg: FilterConfig,
    ctx: BoundContext | None,
) -> PredicateTally:
    """Evaluate the guarantee predicates and condition thresholds on one step.

    The guarantee predicates need no isometry constants.  The condition
    predicates additionally
    need a populated table in ``ctx``; at scales where constants are sampled
    their hypotheses rarely verify, which shows up as a zero hypothesis count
    rather than as a silent pass.
    """
    tally = PredicateTally()
    if diag.failed_stage is not None or diag.true_support is None:
        return tally
    h, v = detection_guarantee_violations(diag, x_true, cfg.alpha)
    tally.add("detection_guarantee", h, len(v))
    h, v = no_false_deletion_guarantee_violations(diag, x_true, cfg.alpha_del)
    tally.add("no_false_deletion_guarantee", h, len(v))
    h, v = extras_deletion_guarantee_violations(diag, x_true, cfg.alpha_del)
    tally.add("extras_deletion_guarantee", h, len(v))

    if ctx is None:
        return tally

    # detection condition at the realized sizes
    size_T = len(diag.T_prev)
    size_delta = len(diag.delta_pre)
    if size_delta > 0:
        det = detection_condition(ctx, size_T, size_delta, cfg.alpha)
        if det.applicable and det.gate_holds:
            hyp = [i for i in diag.delta_pre if x_true[i] ** 2 > det.threshold_sq]
            bad = [i for i in hyp if i not in diag.T_det]
            tally.add("detection_condition", len(hyp), len(bad))
        else:
            tally.add("detection_condition", 0, 0)

    misses_count = len(diag.det_misses)
    misses_linf = max((abs(x_true[i]) for i in diag.det_misses), default=0.0)
    nfd = no_false_deletion_condition(
        ctx, len(diag.T_det), misses_count, misses_count, misses_linf, cfg.alpha_del
    )
    if nfd.applicable:
        truth = diag.true_support
        hyp = [i for i in diag.T_det if i in truth and x_true[i] ** 2 > nfd.threshold_sq]
        bad = [i for i in hyp if i not in diag.final_support]
        tally.add("no_false_deletion_condition", len(hyp), len(bad))
    else:
        tally.add("no_false_deletion_condition", 0, 0)

    dele = deletion_condition(ctx, len(diag.T_det), misses_count, misses_count, misses_linf)
    if dele.applicable and cfg.alpha_del ** 2 >= dele.threshold_sq:
        bad = [i for i in diag.det_extras if i in diag.final_support]
        tally.add("deletion_condition", len(diag.det_extras), len(bad))
    else:
        tally.add("deletion_condition", 0, 0)
    return tally

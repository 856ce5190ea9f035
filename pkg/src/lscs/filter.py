"""Recursive support-tracking estimator and its baselines.

One time step, given the previous support estimate T:

1. least squares on T and the measurement residual it leaves,
2. Dantzig-selector solve on that residual, added back to the LS estimate,
3. detection: threshold the combined estimate to grow the support,
4. least squares on the grown support,
5. deletion: threshold that estimate to shrink the support,
6. final least squares on the surviving support.

Detection uses a strict ``>`` and deletion uses ``<=``, so a value exactly at
the detection threshold is not added while one exactly at the deletion
threshold is removed.

Baselines: least squares on the true support (the oracle), and a one-shot
solve-threshold-refit estimator used both for comparison and for the t=0
initialization from a taller matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SupportSet, magnitude_order, support_of
from .measurement import MeasurementMatrix
from .solver import LsSolveError, ls_on_support, solve_dantzig

DETECTION_THRESHOLD = "threshold"
DETECTION_GREEDY = "greedy_condition_number"


@dataclass(frozen=True)
class FilterConfig:
    lam: float
    alpha: float
    alpha_del: float
    max_additions_per_step: int | None = None
    condition_number_cap: float = 1e8
    detection_mode: str = DETECTION_THRESHOLD

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0 or self.alpha_del < 0:
            raise ValueError("lam, alpha, alpha_del must be nonnegative")
        if self.detection_mode not in (DETECTION_THRESHOLD, DETECTION_GREEDY):
            raise ValueError(f"unknown detection mode {self.detection_mode!r}")
        if self.detection_mode == DETECTION_GREEDY and self.condition_number_cap <= 1:
            raise ValueError("greedy detection needs condition_number_cap > 1")
        if self.max_additions_per_step is not None and self.max_additions_per_step < 0:
            raise ValueError("max_additions_per_step must be nonnegative")


@dataclass(frozen=True)
class FilterState:
    support_estimate: SupportSet
    x_hat: np.ndarray
    t: int


@dataclass
class StepDiagnostics:
    """Everything one step produced, for metrics and predicate checks.

    Ground-truth-derived fields stay ``None`` when no truth was supplied.
    """

    t: int
    T_prev: SupportSet
    x_init: np.ndarray | None = None
    y_res: np.ndarray | None = None
    beta_hat: np.ndarray | None = None
    x_csres: np.ndarray | None = None
    T_det: SupportSet | None = None
    x_det: np.ndarray | None = None
    deleted: SupportSet | None = None
    final_support: SupportSet | None = None
    x_final: np.ndarray | None = None
    failed_stage: str | None = None
    failure: str | None = None
    # with ground truth:
    true_support: SupportSet | None = None
    delta_pre: SupportSet | None = None        # misses of T_prev vs truth
    delta_e_pre: SupportSet | None = None      # extras of T_prev vs truth
    det_misses: SupportSet | None = None       # truth minus detected support
    det_extras: SupportSet | None = None       # detected support minus truth
    misses: int | None = None
    extras: int | None = None
    err_init: float | None = None
    err_csres: float | None = None
    err_det: float | None = None
    err_final: float | None = None


def initial_ls_residual(
    A: MeasurementMatrix, T: SupportSet, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """LS estimate on T (zero off T) and the residual it leaves in y."""
    x_init = ls_on_support(A, T, y)
    y_res = np.asarray(y, dtype=float) - A.entries @ x_init
    return x_init, y_res


def cs_residual_estimate(
    A: MeasurementMatrix, x_init: np.ndarray, y_res: np.ndarray, lam: float
) -> np.ndarray:
    """Dantzig-selector solve on the residual, added back to the LS estimate."""
    sol = solve_dantzig(A, y_res, lam)
    if sol.status != "optimal":
        raise RuntimeError(f"selector solve ended with status {sol.status}")
    return sol.zeta_hat + x_init


def detect(
    x_csres: np.ndarray, T: SupportSet, cfg: FilterConfig, A: MeasurementMatrix
) -> SupportSet:
    """Grow T with off-support candidates from the combined estimate."""
    x_csres = np.asarray(x_csres, dtype=float)
    off = T.complement()
    if cfg.detection_mode == DETECTION_THRESHOLD:
        crossing = [i for i in off if abs(x_csres[i]) > cfg.alpha]
        if cfg.max_additions_per_step is not None and len(crossing) > cfg.max_additions_per_step:
            ranked = magnitude_order(x_csres, SupportSet(crossing, T.m))
            crossing = list(ranked[: cfg.max_additions_per_step])
        return T | SupportSet(crossing, T.m)

    # greedy: add candidates by magnitude while the submatrix stays well-conditioned
    candidates = [i for i in magnitude_order(x_csres, off) if x_csres[i] != 0.0]
    current = list(T.indices)
    added = 0
    for i in candidates:
        if cfg.max_additions_per_step is not None and added >= cfg.max_additions_per_step:
            break
        if len(current) >= A.n:
            break
        trial = current + [int(i)]
        if np.linalg.cond(A.entries[:, trial]) > cfg.condition_number_cap:
            break
        current = trial
        added += 1
    return SupportSet(current, T.m)


def delete(x_det: np.ndarray, T_det: SupportSet, alpha_del: float) -> SupportSet:
    """Drop entries of the detected support at or below the deletion threshold."""
    x_det = np.asarray(x_det, dtype=float)
    keep = [i for i in T_det if abs(x_det[i]) > alpha_del]
    return SupportSet(keep, T_det.m)


def genie_ls(A: MeasurementMatrix, N: SupportSet, y: np.ndarray) -> np.ndarray:
    """Least squares on the true support; the oracle baseline."""
    return ls_on_support(A, N, y)


def simple_cs(
    A: MeasurementMatrix, y: np.ndarray, lam: float, alpha: float
) -> tuple[np.ndarray, SupportSet]:
    """One-shot estimate: selector solve, support threshold, LS refit.

    Returns the refit estimate and its support.  Used as the t=0
    initialization (with a taller matrix) and as a per-step baseline.
    """
    sol = solve_dantzig(A, y, lam)
    if sol.status != "optimal":
        raise RuntimeError(f"selector solve ended with status {sol.status}")
    support = SupportSet([i for i in range(A.m) if abs(sol.zeta_hat[i]) > alpha], A.m)
    x_hat = ls_on_support(A, support, y)
    return x_hat, support


def _truth_fields(diag: StepDiagnostics, x_true: np.ndarray) -> None:
    truth = support_of(x_true)
    diag.true_support = truth
    diag.delta_pre = truth - diag.T_prev
    diag.delta_e_pre = diag.T_prev - truth
    if diag.x_init is not None:
        diag.err_init = float(np.sum((x_true - diag.x_init) ** 2))
    if diag.x_csres is not None:
        diag.err_csres = float(np.sum((x_true - diag.x_csres) ** 2))
    if diag.T_det is not None:
        diag.det_misses = truth - diag.T_det
        diag.det_extras = diag.T_det - truth
    if diag.x_det is not None:
        diag.err_det = float(np.sum((x_true - diag.x_det) ** 2))
    if diag.final_support is not None:
        diag.misses = len(truth - diag.final_support)
        diag.extras = len(diag.final_support - truth)
    if diag.x_final is not None:
        diag.err_final = float(np.sum((x_true - diag.x_final) ** 2))


def lscs_step(
    state: FilterState,
    A: MeasurementMatrix,
    y: np.ndarray,
    cfg: FilterConfig,
    x_true: np.ndarray | None = None,
) -> tuple[FilterState, StepDiagnostics]:
    """Advance the estimator one time step.

    On a stage failure (ill-conditioned least squares, selector breakdown) the
    step keeps the previous support estimate, reports the stage in the
    diagnostics, and carries the best estimate computed so far.
    """
    t = state.t + 1
    T = state.support_estimate
    diag = StepDiagnostics(t=t, T_prev=T)

    def fallback(stage: str, exc: Exception) -> tuple[FilterState, StepDiagnostics]:
        diag.failed_stage = stage
        diag.failure = str(exc)
        x_hat = diag.x_init if diag.x_init is not None else state.x_hat
        diag.final_support = T
        diag.x_final = x_hat
        if x_true is not None:
            _truth_fields(diag, x_true)
        return FilterState(T, x_hat, t), diag

    try:
        diag.x_init, diag.y_res = initial_ls_residual(A, T, y)
    except LsSolveError as exc:
        return fallback("initial_ls", exc)
    try:
        diag.x_csres = cs_residual_estimate(A, diag.x_init, diag.y_res, cfg.lam)
        diag.beta_hat = diag.x_csres - diag.x_init
    except RuntimeError as exc:
        return fallback("cs_residual", exc)
    diag.T_det = detect(diag.x_csres, T, cfg, A)
    try:
        diag.x_det = ls_on_support(A, diag.T_det, y)
    except LsSolveError as exc:
        return fallback("detect_ls", exc)
    diag.final_support = delete(diag.x_det, diag.T_det, cfg.alpha_del)
    diag.deleted = diag.T_det - diag.final_support
    try:
        diag.x_final = ls_on_support(A, diag.final_support, y)
    except LsSolveError as exc:
        return fallback("final_ls", exc)

    if x_true is not None:
        _truth_fields(diag, x_true)
    return FilterState(diag.final_support, diag.x_final, t), diag

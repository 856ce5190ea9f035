"""Config-driven Monte Carlo experiments with deterministic CSV/JSON output.

Experiment kinds:

* ``static_table``   one-shot reconstruction grid over (n, sigma) cells,
  comparing the residual-based estimate against plain selector solves,
* ``stability``      tracking run on the ramped signal model,
* ``low_snr``        tracking runs at low SNR (slow and fast addition
  variants) initialized by a one-shot solve on a taller matrix,
* ``bound_validation``  seeded soundness sweep of the error bounds against
  actual errors at exhaustively-computed isometry constants.

Aggregate NMSE is the ratio of summed squared errors to summed signal energy
over all trials and steps; per-(trial, t) rows are also emitted so a
per-instant convention can be recovered.  Trials run sequentially in a fixed
order and every random draw derives from the experiment seed, so re-running a
config reproduces output files byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    BoundContext,
    PredicateTally,
    simplified_residual_bound,
    compressibility_residual_bound,
    detected_support_ls_error_bound,
    runtime_step_checks,
    residual_recovery_bound,
)
from .core import SupportSet, support_of
from .filter import (
    FilterConfig,
    FilterState,
    detect,
    genie_ls,
    initial_ls_residual,
    lscs_step,
    simple_cs,
)
from .measurement import (
    MeasurementMatrix,
    RipTable,
    build_rip_table,
    delta_exhaustive,
    gen_perturbed_orthonormal_matrix,
    theta_exhaustive,
)
from .sigmodel import SignalModelParams, SignalSequence, generate
from .solver import LsSolveError, ls_on_support, solve_dantzig

CSV_HEADER = "trial,t,method,nmse,misses,extras,support_size,err_csres,err_final"

METHOD_LSCS = "lscs"
METHOD_GENIE = "genie_ls"
METHOD_CS = "simple_cs"


class ConfigError(ValueError):
    """Invalid or missing experiment configuration."""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.9g" % v
    return str(v)


@dataclass
class MetricsRow:
    trial: int              # -1 flags an aggregate row
    t: int                  # -1 flags the overall aggregate
    method: str
    nmse: float | None = None
    misses: int | None = None
    extras: int | None = None
    support_size: int | None = None
    err_csres: float | None = None
    err_final: float | None = None

    def to_csv_line(self) -> str:
        return ",".join([
            str(self.trial), str(self.t), self.method,
            _fmt(self.nmse), _fmt(self.misses), _fmt(self.extras),
            _fmt(self.support_size), _fmt(self.err_csres), _fmt(self.err_final),
        ])


def write_method_csv(path: Path, rows: list[MetricsRow]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv_line() + "\n")


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def write_manifest(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _req(cfg: dict, key: str, kind=None):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    value = cfg[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} has wrong type {type(value).__name__}")
    return value


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# config parsing helpers
# ---------------------------------------------------------------------------


def _parse_filter(cfg: dict) -> FilterConfig:
    return FilterConfig(
        lam=float(_req(cfg, "lam")),
        alpha=float(_req(cfg, "alpha")),
        alpha_del=float(_req(cfg, "alpha_del")),
        max_additions_per_step=(
            None if cfg.get("max_additions_per_step") is None
            else int(cfg["max_additions_per_step"])
        ),
        condition_number_cap=float(cfg.get("condition_number_cap", 1e8)),
        detection_mode=cfg.get("detection_mode", "threshold"),
    )


def _rates_vector(spec, m: int) -> np.ndarray:
    """Rates given either as an explicit list, a constant, or value classes
    split evenly across indices."""
    if isinstance(spec, (int, float)):
        return np.full(m, float(spec))
    if isinstance(spec, list):
        rates = np.asarray(spec, dtype=float)
        if rates.shape != (m,):
            raise ConfigError("explicit rates list must have length m")
        return rates
    if isinstance(spec, dict) and "classes" in spec:
        classes = [float(v) for v in spec["classes"]]
        if not classes:
            raise ConfigError("rates classes must be nonempty")
        rates = np.empty(m)
        bounds = np.linspace(0, m, len(classes) + 1).astype(int)
        for k, v in enumerate(classes):
            rates[bounds[k]:bounds[k + 1]] = v
        return rates
    raise ConfigError("rates must be a number, a length-m list, or {'classes': [...]}")


def _parse_model(cfg: dict, seed: int) -> SignalModelParams:
    m = int(_req(cfg, "m"))
    return SignalModelParams(
        m=m,
        s0=int(_req(cfg, "s0")),
        sa=int(_req(cfg, "sa")),
        d=int(_req(cfg, "d")),
        r=int(_req(cfg, "r")),
        big_m=float(_req(cfg, "big_m")),
        rates=_rates_vector(_req(cfg, "rates"), m),
        t_end=int(_req(cfg, "t_end")),
        seed=seed,
    )


def _noise_std(noise: dict) -> float:
    if noise["kind"] == "gaussian":
        return float(noise["sigma"])
    if noise["kind"] == "uniform":
        return float(noise["c"]) / math.sqrt(3.0)
    raise ConfigError(f"unknown noise kind {noise.get('kind')!r}")


def _draw_noise(noise: dict, size: int, rng: np.random.Generator) -> np.ndarray:
    if noise["kind"] == "gaussian":
        return float(noise["sigma"]) * rng.standard_normal(size)
    if noise["kind"] == "uniform":
        c = float(noise["c"])
        return rng.uniform(-c, c, size)
    raise ConfigError(f"unknown noise kind {noise.get('kind')!r}")


def _noise_linf_bound(noise: dict) -> float:
    """Hard l-inf bound when one exists; infinity for unbounded noise."""
    if noise["kind"] == "uniform":
        return float(noise["c"])
    return float("inf")


# ---------------------------------------------------------------------------
# static (single time instant) experiment
# ---------------------------------------------------------------------------


def _ds_method_name(factor: float) -> str:
    return "ds_%gsigma" % factor


def run_static_experiment(cfg: dict, out_dir: Path | None = None) -> dict:
    """One-shot reconstruction over (n, sigma) cells.

    Per trial: a fresh column-normalized Gaussian matrix, a support of
    ``support_size`` +-1 spikes, a known part missing ``delta_size`` true
    indices and carrying ``delta_e_size`` spurious ones, Gaussian noise.
    The residual-based estimate runs at ``csres_lambda_factor * sigma``; plain
    selector solves run at each of ``ds_lambda_factors * sigma``.
    """
    m = int(_req(cfg, "m"))
    support_size = int(_req(cfg, "support_size"))
    delta_size = int(_req(cfg, "delta_size"))
    delta_e_size = int(_req(cfg, "delta_e_size"))
    cells = _req(cfg, "cells", list)
    trials = int(_req(cfg, "trials"))
    seed = int(_req(cfg, "seed"))
    csres_factor = float(cfg.get("csres_lambda_factor", 4.0))
    ds_factors = [float(v) for v in cfg.get("ds_lambda_factors", [12.0, 4.0, 0.4])]
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if not 0 <= delta_size <= support_size or support_size > m:
        raise ConfigError("need delta_size <= support_size <= m")

    methods = ["cs_residual"] + [_ds_method_name(f) for f in ds_factors]
    summary = []
    all_rows: dict[tuple[int, str], list[MetricsRow]] = {}

    for ci, cell in enumerate(cells):
        n = int(_req(cell, "n"))
        sigma = float(_req(cell, "sigma"))
        err_sum = {name: 0.0 for name in methods}
        sig_sum = 0.0
        rows = {name: [] for name in methods}
        for k in range(trials):
            rng = np.random.default_rng([seed, ci, k])
            A = MeasurementMatrix.from_columns(rng.standard_normal((n, m)))
            support = rng.choice(m, size=support_size, replace=False)
            x = np.zeros(m)
            x[support] = rng.choice([-1.0, 1.0], size=support_size)
            delta = rng.choice(support, size=delta_size, replace=False)
            off = np.setdiff1d(np.arange(m), support)
            delta_e = rng.choice(off, size=delta_e_size, replace=False)
            known = SupportSet(np.concatenate([np.setdiff1d(support, delta), delta_e]), m)
            w = sigma * rng.standard_normal(n)
            y = A.entries @ x + w
            sig_sq = float(x @ x)
            sig_sum += sig_sq

            x_init, y_res = initial_ls_residual(A, known, y)
            sol = solve_dantzig(A, y_res, csres_factor * sigma)
            x_csres = sol.zeta_hat + x_init
            err = float(np.sum((x - x_csres) ** 2))
            err_sum["cs_residual"] += err
            rows["cs_residual"].append(MetricsRow(
                trial=k, t=0, method="cs_residual", nmse=_ratio(err, sig_sq),
                err_csres=err, err_final=err,
            ))

            for factor in ds_factors:
                name = _ds_method_name(factor)
                ds = solve_dantzig(A, y, factor * sigma)
                err = float(np.sum((x - ds.zeta_hat) ** 2))
                err_sum[name] += err
                rows[name].append(MetricsRow(
                    trial=k, t=0, method=name, nmse=_ratio(err, sig_sq), err_final=err,
                ))

        nmse = {name: _ratio(err_sum[name], sig_sum) for name in methods}
        for name in methods:
            rows[name].append(MetricsRow(
                trial=-1, t=-1, method=name, nmse=nmse[name], err_final=err_sum[name],
            ))
            all_rows[(ci, name)] = rows[name]
        summary.append({"n": n, "sigma": sigma, "nmse": nmse})

    result = {
        "kind": "static_table",
        "cells": summary,
        "config": cfg,
        "version": __version__,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        for (ci, name), rows in sorted(all_rows.items()):
            cell = summary[ci]
            sub = out_dir / ("n%d_sigma%s" % (cell["n"], _fmt(cell["sigma"])))
            write_method_csv(sub / f"{name}.csv", rows)
        write_manifest(out_dir / "manifest.json", result)
    return result


# ---------------------------------------------------------------------------
# tracking experiments (stability / low SNR)
# ---------------------------------------------------------------------------


@dataclass
class TrackingResult:
    nmse: dict
    per_t_nmse: dict
    mean_misses: list[float]
    mean_extras: list[float]
    epoch_delays: list[int | None]       # flattened over (trial, epoch)
    zero_hit_fraction: float | None
    init_exact_fraction: float | None
    failed_steps: int
    tally: PredicateTally
    rows: dict = field(default_factory=dict)
    snr: dict | None = None


def _epoch_delays(
    seq: SignalSequence, misses: list[int], extras: list[int], window: int
) -> list[int | None]:
    """Per addition epoch: steps until misses+extras first hit zero."""
    out = []
    t_end = len(misses) - 1
    for t_j in seq.addition_times:
        if t_j + window > t_end:
            continue
        delay = None
        horizon = min(t_j + seq.params.d - 1, t_end)
        for t in range(t_j, horizon + 1):
            if misses[t] + extras[t] == 0:
                delay = t - t_j
                break
        out.append(delay)
    return out


def _condition_rip_table(
    A: MeasurementMatrix,
    max_t: int,
    max_d: int,
    trials: int,
    seed: int,
) -> RipTable:
    """Sampled table covering every size pair the condition predicates enumerate.

    The detection threshold maximises over all ``(|T|, |Delta|)`` pairs up to
    the realized caps, so the whole rectangle is needed, not just realized
    sizes."""
    delta_sizes = set(range(1, max_t + 1))
    for d_sz in range(1, max_d + 1):
        delta_sizes.add(2 * d_sz)
    pairs = {(t_sz, d_sz) for t_sz in range(1, max_t + 1) for d_sz in range(1, max_d + 1)
             if t_sz + d_sz <= A.m}
    pairs |= {(d_sz, 2 * d_sz) for d_sz in range(1, max_d + 1) if 3 * d_sz <= A.m}
    return build_rip_table(
        A, sorted(delta_sizes), sorted(pairs), mode="sampled", trials=trials, seed=seed,
    )


def _run_tracking_trials(
    n: int,
    model_cfg: dict,
    noise: dict,
    fcfg: FilterConfig,
    init: dict,
    methods: list[str],
    trials: int,
    seed: int,
    cs_lambda: float,
    check_guarantees: bool,
    rip_trials: int,
) -> TrackingResult:
    err_sums = {name: 0.0 for name in methods}
    sig_sum_total = 0.0
    t_end = int(_req(model_cfg, "t_end"))
    per_t_err = {name: np.zeros(t_end + 1) for name in methods}
    per_t_sig = np.zeros(t_end + 1)
    sum_misses = np.zeros(t_end + 1)
    sum_extras = np.zeros(t_end + 1)
    delays: list[int | None] = []
    init_exact = 0
    failed_steps = 0
    tally = PredicateTally()
    rows = {name: [] for name in methods}
    window = int(init.get("zero_hit_window", 4))

    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        A = MeasurementMatrix.from_columns(rng.standard_normal((n, int(model_cfg["m"]))))
        seq = generate(_parse_model(model_cfg, seed=int(rng.integers(2 ** 62))))
        m = seq.params.m

        ys = [seq.signal_at(t) @ A.entries.T + _draw_noise(noise, n, rng) for t in range(t_end + 1)]

        x0 = seq.signal_at(0)
        if init["kind"] == "true_support":
            n0_hat = seq.support_at(0)
            x0_hat = ls_on_support(A, n0_hat, ys[0])
        elif init["kind"] == "simple_cs":
            n0 = int(_req(init, "n0"))
            A0 = MeasurementMatrix.from_columns(rng.standard_normal((n0, m)))
            y0 = A0.entries @ x0 + _draw_noise(noise, n0, rng)
            x0_hat, n0_hat = simple_cs(
                A0, y0, float(init.get("lam", fcfg.lam)), float(init.get("alpha", fcfg.alpha))
            )
        else:
            raise ConfigError(f"unknown init kind {init.get('kind')!r}")
        if n0_hat == seq.support_at(0):
            init_exact += 1

        state = FilterState(n0_hat, x0_hat, 0)
        misses_t = [len(seq.support_at(0) - n0_hat)]
        extras_t = [len(n0_hat - seq.support_at(0))]
        diags = []

        sig_sq0 = float(x0 @ x0)
        per_t_sig[0] += sig_sq0
        sig_sum_total += sig_sq0
        if METHOD_LSCS in methods:
            err0 = float(np.sum((x0 - x0_hat) ** 2))
            err_sums[METHOD_LSCS] += err0
            per_t_err[METHOD_LSCS][0] += err0
            rows[METHOD_LSCS].append(MetricsRow(
                trial=k, t=0, method=METHOD_LSCS, nmse=_ratio(err0, sig_sq0),
                misses=misses_t[0], extras=extras_t[0], support_size=len(n0_hat),
                err_final=err0,
            ))
        if METHOD_GENIE in methods:
            xg = genie_ls(A, seq.support_at(0), ys[0])
            errg = float(np.sum((x0 - xg) ** 2))
            err_sums[METHOD_GENIE] += errg
            per_t_err[METHOD_GENIE][0] += errg
            rows[METHOD_GENIE].append(MetricsRow(
                trial=k, t=0, method=METHOD_GENIE, nmse=_ratio(errg, sig_sq0),
                misses=0, extras=0, support_size=len(seq.support_at(0)), err_final=errg,
            ))
        if METHOD_CS in methods:
            ds = solve_dantzig(A, ys[0], cs_lambda)
            errc = float(np.sum((x0 - ds.zeta_hat) ** 2))
            err_sums[METHOD_CS] += errc
            per_t_err[METHOD_CS][0] += errc
            rows[METHOD_CS].append(MetricsRow(
                trial=k, t=0, method=METHOD_CS, nmse=_ratio(errc, sig_sq0), err_final=errc,
            ))

        for t in range(1, t_end + 1):
            x_true = seq.signal_at(t)
            sig_sq = float(x_true @ x_true)
            per_t_sig[t] += sig_sq
            sig_sum_total += sig_sq
            state, diag = lscs_step(state, A, ys[t], fcfg, x_true=x_true)
            if diag.failed_stage is not None:
                failed_steps += 1
            misses_t.append(diag.misses)
            extras_t.append(diag.extras)
            diags.append(diag)
            if METHOD_LSCS in methods:
                err_sums[METHOD_LSCS] += diag.err_final
                per_t_err[METHOD_LSCS][t] += diag.err_final
                rows[METHOD_LSCS].append(MetricsRow(
                    trial=k, t=t, method=METHOD_LSCS, nmse=_ratio(diag.err_final, sig_sq),
                    misses=diag.misses, extras=diag.extras,
                    support_size=len(diag.final_support),
                    err_csres=diag.err_csres, err_final=diag.err_final,
                ))
            if METHOD_GENIE in methods:
                xg = genie_ls(A, seq.support_at(t), ys[t])
                errg = float(np.sum((x_true - xg) ** 2))
                err_sums[METHOD_GENIE] += errg
                per_t_err[METHOD_GENIE][t] += errg
                rows[METHOD_GENIE].append(MetricsRow(
                    trial=k, t=t, method=METHOD_GENIE, nmse=_ratio(errg, sig_sq),
                    misses=0, extras=0, support_size=len(seq.support_at(t)), err_final=errg,
                ))
            if METHOD_CS in methods:
                ds = solve_dantzig(A, ys[t], cs_lambda)
                errc = float(np.sum((x_true - ds.zeta_hat) ** 2))
                err_sums[METHOD_CS] += errc
                per_t_err[METHOD_CS][t] += errc
                rows[METHOD_CS].append(MetricsRow(
                    trial=k, t=t, method=METHOD_CS, nmse=_ratio(errc, sig_sq), err_final=errc,
                ))

        sum_misses += np.asarray(misses_t, dtype=float)
        sum_extras += np.asarray(extras_t, dtype=float)
        delays.extend(_epoch_delays(seq, misses_t, extras_t, window))

        if check_guarantees:
            max_t = max_d = 0
            for diag in diags:
                if diag.failed_stage is not None:
                    continue
                max_t = max(max_t, len(diag.T_prev), len(diag.T_det))
                max_d = max(max_d, len(diag.delta_pre), len(diag.det_misses))
            table = _condition_rip_table(
                A, max_t, max_d, trials=rip_trials, seed=int(seed) + 7919 * (k + 1)
            )
            ctx = BoundContext(
                rip=table, n=n, m=m, lam=fcfg.lam,
                norm_A_1=A.induced_one_norm,
                noise_linf_bound=_noise_linf_bound(noise),
            )
            for t, diag in enumerate(diags, start=1):
                tally.merge(runtime_step_checks(diag, seq.signal_at(t), fcfg, ctx))

    for name in methods:
        per_t = [
            _ratio(per_t_err[name][t], per_t_sig[t]) for t in range(t_end + 1)
        ]
        for t in range(t_end + 1):
            rows[name].append(MetricsRow(
                trial=-1, t=t, method=name, nmse=per_t[t],
                err_final=per_t_err[name][t],
            ))
        rows[name].append(MetricsRow(
            trial=-1, t=-1, method=name,
            nmse=_ratio(err_sums[name], sig_sum_total), err_final=err_sums[name],
        ))

    scored = [d for d in delays]
    hit = sum(1 for d in scored if d is not None and d <= window)
    return TrackingResult(
        nmse={name: float(_ratio(err_sums[name], sig_sum_total)) for name in methods},
        per_t_nmse={
            name: [float(_ratio(per_t_err[name][t], per_t_sig[t])) for t in range(t_end + 1)]
            for name in methods
        },
        mean_misses=[float(v) for v in sum_misses / trials],
        mean_extras=[float(v) for v in sum_extras / trials],
        epoch_delays=delays,
        zero_hit_fraction=(hit / len(scored)) if scored else None,
        init_exact_fraction=init_exact / trials,
        failed_steps=failed_steps,
        tally=tally,
        rows=rows,
    )


def run_stability_experiment(cfg: dict, out_dir: Path | None = None) -> TrackingResult:
    """Tracking run on the ramped signal model with exact-support start."""
    n = int(_req(cfg, "n"))
    trials = int(_req(cfg, "trials"))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    seed = int(_req(cfg, "seed"))
    fcfg = _parse_filter(_req(cfg, "filter", dict))
    noise = _req(cfg, "noise", dict)
    methods = list(cfg.get("methods", [METHOD_LSCS, METHOD_GENIE, METHOD_CS]))
    init = dict(cfg.get("init", {"kind": "true_support"}))
    init.setdefault("zero_hit_window", int(cfg.get("zero_hit_window", 4)))
    result = _run_tracking_trials(
        n=n,
        model_cfg=_req(cfg, "model", dict),
        noise=noise,
        fcfg=fcfg,
        init=init,
        methods=methods,
        trials=trials,
        seed=seed,
        cs_lambda=float(cfg.get("cs_lambda", fcfg.lam)),
        check_guarantees=bool(cfg.get("check_guarantees", False)),
        rip_trials=int(cfg.get("rip_sampling_trials", 200)),
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        for name in methods:
            write_method_csv(out_dir / f"{name}.csv", result.rows[name])
        write_manifest(out_dir / "manifest.json", {
            "kind": "stability",
            "config": cfg,
            "version": __version__,
            "nmse": result.nmse,
            "zero_hit_fraction": result.zero_hit_fraction,
            "init_exact_fraction": result.init_exact_fraction,
            "failed_steps": result.failed_steps,
            "predicate_hypotheses": result.tally.hypotheses,
            "predicate_violations": result.tally.violations,
            "rip_provenance": "sampled (lower bounds); condition reports optimistic",
        })
    return result


def snr_summary(model_cfg: dict, noise: dict) -> dict:
    """Deterministic SNR figures of a model config.

    min: mean initial magnitude over all indices divided by the noise standard
    deviation; max: mean plateau magnitude ``min(big_m, d * a_i)`` divided by
    the same.
    """
    m = int(_req(model_cfg, "m"))
    rates = _rates_vector(_req(model_cfg, "rates"), m)
    d = int(_req(model_cfg, "d"))
    big_m = float(_req(model_cfg, "big_m"))
    std = _noise_std(noise)
    return {
        "min_snr": float(np.mean(rates) / std),
        "max_snr": float(np.mean(np.minimum(big_m, d * rates)) / std),
    }


def run_low_snr_experiments(cfg: dict, out_dir: Path | None = None) -> dict:
    """Slow-adds and fast-adds tracking runs with one-shot initialization."""
    variants = _req(cfg, "variants", dict)
    results = {}
    for name in sorted(variants):
        vcfg = dict(variants[name])
        vcfg.setdefault("seed", cfg.get("seed", 0))
        vcfg.setdefault("trials", cfg.get("trials", 100))
        vcfg.setdefault("init", {"kind": "simple_cs", "n0": 150})
        sub = None if out_dir is None else Path(out_dir) / name
        res = run_stability_experiment(vcfg, sub)
        res.snr = snr_summary(vcfg["model"], vcfg["noise"])
        results[name] = res
        if sub is not None:
            write_manifest(sub / "snr.json", res.snr)
    return results


# ---------------------------------------------------------------------------
# bound validation sweep
# ---------------------------------------------------------------------------


def _ensure_delta(table: RipTable, A: MeasurementMatrix, s: int, budget: int) -> None:
    if s > 0 and not table.has_delta(s):
        table.set_delta(s, delta_exhaustive(A, s, budget=budget), True)


def _ensure_theta(table: RipTable, A: MeasurementMatrix, s: int, sp: int, budget: int) -> None:
    if s > 0 and sp > 0 and not table.has_theta(s, sp):
        table.set_theta(s, sp, theta_exhaustive(A, s, sp, budget=budget), True)


def _validation_matrix(kind: str, n: int, m: int, seed: int, noise_scale: float) -> MeasurementMatrix:
    if kind == "gaussian":
        rng = np.random.default_rng(seed)
        return MeasurementMatrix.from_columns(rng.standard_normal((n, m)))
    if kind == "perturbed_orthonormal":
        return gen_perturbed_orthonormal_matrix(n, m, seed, noise_scale)
    raise ConfigError(f"unknown matrix kind {kind!r}")


def run_bound_validation(cfg: dict, out_dir: Path | None = None) -> dict:
    """Assert bounds dominate actual errors on instances whose hypotheses hold.

    Uses exhaustively computed constants only, so every check is a hard
    soundness assertion (slack 1e-9).  Instances whose preconditions do not
    verify are counted and skipped, never asserted.
    """
    m = int(_req(cfg, "m"))
    n = int(_req(cfg, "n"))
    support_size = int(_req(cfg, "support_size"))
    delta_size = int(_req(cfg, "delta_size"))
    delta_e_size = int(_req(cfg, "delta_e_size"))
    lam = float(_req(cfg, "lam"))
    alpha = float(cfg.get("alpha", lam))
    num_matrices = int(cfg.get("num_matrices", 5))
    instances = int(cfg.get("instances_per_matrix", 25))
    if num_matrices < 1 or instances < 1:
        raise ConfigError("num_matrices and instances_per_matrix must be >= 1")
    seed = int(_req(cfg, "seed"))
    budget = int(cfg.get("budget", 2_000_000))
    kind = cfg.get("matrix_kind", "perturbed_orthonormal")
    noise_scale = float(cfg.get("matrix_noise_scale", 0.2))
    mag_low = float(cfg.get("magnitude_low", 0.5))
    mag_high = float(cfg.get("magnitude_high", 2.0))
    max_additions = cfg.get("max_additions_per_step", delta_size + 1)

    size_T = support_size - delta_size + delta_e_size
    checks = ["scan_bound", "single_scale_bound", "compressibility_bound", "detected_ls_bound"]
    verified = {c: 0 for c in checks}
    skipped = {c: 0 for c in checks}
    violations: list[dict] = []

    for mi in range(num_matrices):
        A = _validation_matrix(kind, n, m, seed + 1000 * mi, noise_scale)
        table = RipTable(A.digest())
        scan_cap = size_T + delta_size
        for s in range(1, scan_cap + 1):
            _ensure_delta(table, A, 2 * s, budget)
            _ensure_theta(table, A, s, 2 * s, budget)
        _ensure_delta(table, A, size_T, budget)
        _ensure_theta(table, A, size_T, delta_size, budget)
        w_max = lam / A.induced_one_norm
        ctx = BoundContext(
            rip=table, n=n, m=m, lam=lam, norm_A_1=A.induced_one_norm,
            noise_linf_bound=w_max,
        )
        fcfg = FilterConfig(
            lam=lam, alpha=alpha, alpha_del=alpha,
            max_additions_per_step=None if max_additions is None else int(max_additions),
        )

        for k in range(instances):
            rng = np.random.default_rng([seed, mi, k])
            support = rng.choice(m, size=support_size, replace=False)
            x = np.zeros(m)
            x[support] = rng.uniform(mag_low, mag_high, support_size) * rng.choice(
                [-1.0, 1.0], size=support_size
            )
            delta = rng.choice(support, size=delta_size, replace=False)
            off = np.setdiff1d(np.arange(m), support)
            delta_e = rng.choice(off, size=delta_e_size, replace=False)
            known = SupportSet(np.concatenate([np.setdiff1d(support, delta), delta_e]), m)
            w = rng.uniform(-w_max, w_max, n)
            y = A.entries @ x + w

            x_init, y_res = initial_ls_residual(A, known, y)
            sol = solve_dantzig(A, y_res, lam)
            x_csres = sol.zeta_hat + x_init
            err_csres = float(np.sum((x - x_csres) ** 2))
            x_delta = x[np.sort(delta)]
            w_sq = float(w @ w)

            def record(name: str, res, actual: float, extra: dict | None = None):
                if not res.applicable:
                    skipped[name] += 1
                    return
                if res.optimistic:
                    skipped[name] += 1
                    return
                verified[name] += 1
                if actual > res.value + 1e-9:
                    violations.append({
                        "check": name, "matrix": mi, "instance": k,
                        "bound": res.value, "actual": actual, **(extra or {}),
                    })

            record("scan_bound", residual_recovery_bound(ctx, size_T, x_delta, w_sq), err_csres)
            record(
                "single_scale_bound",
                simplified_residual_bound(ctx, size_T, delta_size, float(x_delta @ x_delta)),
                err_csres,
            )

            pinv_T = np.linalg.pinv(A.columns(known))
            gain = np.abs(pinv_T @ A.entries[:, np.sort(delta)]).sum(axis=0).max() if delta_size else 0.0
            w_l1 = float(np.abs(pinv_T @ w).sum())
            xd_l1 = float(np.abs(x_delta).sum())
            b = gain + max(1.01 * w_l1 / xd_l1 if xd_l1 else 0.0, 1e-9)
            record(
                "compressibility_bound",
                compressibility_residual_bound(ctx, size_T, delta_size, float(x_delta @ x_delta), b),
                err_csres,
                {"b": b},
            )

            t_det = detect(x_csres, known, fcfg, A)
            try:
                x_det = ls_on_support(A, t_det, y)
            except LsSolveError:
                skipped["detected_ls_bound"] += 1
                continue
            det_misses = support_of(x) - t_det
            miss_idx = det_misses.to_array()
            miss_sq = float(np.sum(x[miss_idx] ** 2))
            _ensure_delta(table, A, len(t_det), budget)
            _ensure_theta(table, A, len(t_det), len(det_misses), budget)
            idx = t_det.to_array()
            actual_det = float(np.sum((x[idx] - x_det[idx]) ** 2))
            record(
                "detected_ls_bound",
                detected_support_ls_error_bound(ctx, len(t_det), miss_sq, len(det_misses)),
                actual_det,
            )

    report = {
        "kind": "bound_validation",
        "config": cfg,
        "version": __version__,
        "verified": verified,
        "skipped": skipped,
        "violations": violations,
        "rip_provenance": "exact (exhaustive enumeration)",
    }
    if out_dir is not None:
        write_manifest(Path(out_dir) / "bound_validation.json", report)
    return report


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def run_experiment(cfg: dict, out_dir: Path | None = None):
    kind = _req(cfg, "kind")
    if kind == "static_table":
        return run_static_experiment(cfg, out_dir)
    if kind == "stability":
        return run_stability_experiment(cfg, out_dir)
    if kind == "low_snr":
        return run_low_snr_experiments(cfg, out_dir)
    if kind == "bound_validation":
        return run_bound_validation(cfg, out_dir)
    raise ConfigError(f"unknown experiment kind {kind!r}")

"""Command line front-end.

Commands:
  lscs run <config.json> [--out DIR] [--seed N] [--trials N]
  lscs rip-table <config.json> --out FILE
  lscs check-stability <config.json> [--out FILE]
  lscs version

Flag overrides beat config-file values.  Exit codes: 0 success, 1 config
error, 2 runtime failure, 3 soundness assertion failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bounds import BoundContext, find_min_d0, required_rip_entries, check_stability_conditions
from .harness import ConfigError, run_experiment
from .measurement import (
    EnumerationBudgetExceeded,
    InsufficientRipTable,
    MeasurementMatrix,
    RipTable,
    build_rip_table,
    gen_gaussian_matrix,
    gen_perturbed_orthonormal_matrix,
)
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ASSERTION = 3


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")


def _matrix_from_spec(spec: dict) -> MeasurementMatrix:
    kind = spec.get("kind", "gaussian")
    n, m, seed = int(spec["n"]), int(spec["m"]), int(spec.get("seed", 0))
    if kind == "gaussian":
        return gen_gaussian_matrix(n, m, seed)
    if kind == "perturbed_orthonormal":
        return gen_perturbed_orthonormal_matrix(n, m, seed, float(spec.get("noise_scale", 0.2)))
    raise ConfigError(f"unknown matrix kind {kind!r}")


def _cmd_run(args) -> int:
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials is not None:
        cfg["trials"] = args.trials
    out_dir = Path(args.out) if args.out else None
    result = run_experiment(cfg, out_dir)
    if cfg.get("kind") == "bound_validation":
        n_viol = len(result["violations"])
        print(json.dumps({"verified": result["verified"], "violations": n_viol}, sort_keys=True))
        return EXIT_ASSERTION if n_viol else EXIT_OK
    if cfg.get("kind") == "static_table":
        print(json.dumps(result["cells"], sort_keys=True))
    elif cfg.get("kind") == "stability":
        print(json.dumps({
            "nmse": result.nmse,
            "zero_hit_fraction": result.zero_hit_fraction,
        }, sort_keys=True))
    elif cfg.get("kind") == "low_snr":
        print(json.dumps({
            name: {"nmse": res.nmse, "snr": res.snr} for name, res in result.items()
        }, sort_keys=True))
    return EXIT_OK


def _cmd_rip_table(args) -> int:
    cfg = _load_json(args.config)
    A = _matrix_from_spec(cfg["matrix"])
    table = build_rip_table(
        A,
        delta_sizes=[int(s) for s in cfg.get("delta", [])],
        theta_pairs=[(int(s), int(sp)) for s, sp in cfg.get("theta", [])],
        mode=cfg.get("mode", "exact"),
        budget=int(cfg.get("budget", 2_000_000)),
        trials=int(cfg.get("trials", 2000)),
        seed=int(cfg.get("seed", 0)),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_json() + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_check_stability(args) -> int:
    cfg = _load_json(args.config)
    model_cfg = cfg["model"]
    from .harness import _parse_model  # shared config parsing

    model = _parse_model(model_cfg, seed=0)
    ctx_cfg = cfg["context"]
    rip_spec = cfg["rip_table"]
    if isinstance(rip_spec, str):
        table = RipTable.from_json(Path(rip_spec).read_text())
    else:
        A = _matrix_from_spec(rip_spec["matrix"])
        f = int(cfg.get("f", 0))
        d0_field = cfg.get("d0", "scan")
        d0_probe = model.d - 1 if d0_field == "scan" else int(d0_field)
        deltas, thetas = required_rip_entries(model, f, d0_probe)
        table = build_rip_table(
            A, deltas, thetas,
            mode=rip_spec.get("mode", "sampled"),
            budget=int(rip_spec.get("budget", 2_000_000)),
            trials=int(rip_spec.get("trials", 2000)),
            seed=int(rip_spec.get("seed", 0)),
        )
    ctx = BoundContext(
        rip=table,
        n=int(ctx_cfg["n"]),
        m=model.m,
        lam=float(ctx_cfg["lam"]),
        norm_A_1=float(ctx_cfg["norm_A_1"]),
        noise_linf_bound=float(ctx_cfg["noise_linf_bound"]),
    )
    f = int(cfg.get("f", 0))
    alpha = float(cfg["alpha"])
    alpha_del = cfg.get("alpha_del")
    alpha_del = None if alpha_del is None else float(alpha_del)
    if cfg.get("d0", "scan") == "scan":
        d0, report = find_min_d0(model, ctx, f, alpha, alpha_del)
        doc = {"min_d0": d0, "report": None if report is None else report.to_json_dict()}
    else:
        report = check_stability_conditions(model, ctx, f, int(cfg["d0"]), alpha, alpha_del)
        doc = {"report": report.to_json_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lscs", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory for CSV/manifest")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--trials", type=int, default=None)

    p_rip = sub.add_parser("rip-table", help="precompute a constants table")
    p_rip.add_argument("config")
    p_rip.add_argument("--out", required=True)

    p_chk = sub.add_parser("check-stability", help="evaluate the stability conditions")
    p_chk.add_argument("config")
    p_chk.add_argument("--out", default=None)

    sub.add_parser("version", help="print the package version")

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "rip-table":
            return _cmd_rip_table(args)
        if args.command == "check-stability":
            return _cmd_check_stability(args)
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnumerationBudgetExceeded, InsufficientRipTable, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

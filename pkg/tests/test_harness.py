import json
import subprocess
import sys

import pytest

from lscs.harness import (
    CSV_HEADER,
    ConfigError,
    MetricsRow,
    run_bound_validation,
    run_experiment,
    run_low_snr_experiments,
    run_static_experiment,
    run_stability_experiment,
    snr_summary,
    write_method_csv,
)


def small_static_cfg(trials=3):
    return {
        "kind": "static_table",
        "m": 40, "support_size": 6, "delta_size": 1, "delta_e_size": 1,
        "cells": [{"n": 20, "sigma": 0.05}],
        "trials": trials, "seed": 11,
    }


def small_stability_cfg(trials=2, check_guarantees=False):
    return {
        "kind": "stability",
        "n": 25, "trials": trials, "seed": 7,
        "model": {"m": 60, "s0": 8, "sa": 1, "d": 6, "r": 2, "big_m": 2.0,
                  "rates": 0.5, "t_end": 12},
        "noise": {"kind": "uniform", "c": 0.02},
        "filter": {"lam": 0.15, "alpha": 0.05, "alpha_del": 0.1},
        "init": {"kind": "true_support"},
        "zero_hit_window": 3,
        "check_guarantees": check_guarantees,
        "rip_sampling_trials": 50,
    }


class TestConfigValidation:
    def test_missing_key(self):
        with pytest.raises(ConfigError):
            run_static_experiment({"kind": "static_table"})

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            run_experiment({"kind": "nope"})

    def test_bad_trials(self):
        cfg = small_static_cfg(trials=0)
        with pytest.raises(ConfigError):
            run_static_experiment(cfg)

    def test_bad_rates(self):
        cfg = small_stability_cfg()
        cfg["model"]["rates"] = [0.1, 0.2]
        with pytest.raises(ConfigError):
            run_stability_experiment(cfg)


class TestStaticRunner:
    def test_runs_and_reports(self, tmp_path):
        res = run_static_experiment(small_static_cfg(), tmp_path)
        cell = res["cells"][0]
        assert set(cell["nmse"]) == {
            "cs_residual", "ds_12sigma", "ds_4sigma", "ds_0.4sigma",
        }
        assert all(v >= 0 for v in cell["nmse"].values())
        sub = tmp_path / "n20_sigma0.05"
        assert (sub / "cs_residual.csv").exists()
        assert (tmp_path / "manifest.json").exists()

    def test_csv_schema(self, tmp_path):
        run_static_experiment(small_static_cfg(), tmp_path)
        lines = (tmp_path / "n20_sigma0.05" / "cs_residual.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER
        first = lines[1].split(",")
        assert first[0] == "0" and first[2] == "cs_residual"
        # aggregate row flagged with trial = -1
        assert lines[-1].split(",")[0] == "-1"

    def test_noiseless_true_support_limit(self):
        # sigma -> 0 with the known part equal to the true support: the
        # residual route recovers exactly
        cfg = small_static_cfg(trials=2)
        cfg["delta_size"] = 0
        cfg["delta_e_size"] = 0
        cfg["cells"] = [{"n": 20, "sigma": 1e-9}]
        res = run_static_experiment(cfg)
        assert res["cells"][0]["nmse"]["cs_residual"] < 1e-12


class TestStabilityRunner:
    def test_basic_run(self):
        res = run_stability_experiment(small_stability_cfg())
        assert set(res.nmse) == {"lscs", "genie_ls", "simple_cs"}
        assert res.nmse["lscs"] < 0.2
        assert res.failed_steps == 0
        assert len(res.mean_misses) == 13

    def test_outputs(self, tmp_path):
        run_stability_experiment(small_stability_cfg(), tmp_path)
        for name in ["lscs", "genie_ls", "simple_cs"]:
            assert (tmp_path / f"{name}.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert "nmse" in manifest and "zero_hit_fraction" in manifest

    def test_epoch_delays_recorded(self):
        res = run_stability_experiment(small_stability_cfg())
        assert len(res.epoch_delays) > 0

    def test_guarantee_checks_run_clean(self):
        res = run_stability_experiment(small_stability_cfg(check_guarantees=True))
        assert res.tally.total_violations() == 0
        assert res.tally.hypotheses.get("detection_guarantee", 0) >= 0

    def test_noiseless_genie_lock(self):
        cfg = small_stability_cfg(trials=1)
        cfg["noise"] = {"kind": "uniform", "c": 1e-12}
        cfg["filter"] = {"lam": 0.05, "alpha": 0.02, "alpha_del": 0.02}
        res = run_stability_experiment(cfg)
        assert res.nmse["lscs"] == pytest.approx(res.nmse["genie_ls"], abs=1e-6)


class TestLowSnrRunner:
    def test_snr_summary_values(self):
        model = {"m": 200, "s0": 20, "sa": 2, "d": 8, "r": 3, "big_m": 1.0,
                 "rates": 0.2, "t_end": 24}
        snr = snr_summary(model, {"kind": "uniform", "c": 0.1266})
        assert snr["min_snr"] == pytest.approx(2.73, rel=0.01)
        assert snr["max_snr"] == pytest.approx(13.7, rel=0.01)

    def test_snr_summary_fast(self):
        model = {"m": 200, "s0": 20, "sa": 2, "d": 3, "r": 2, "big_m": 1.0,
                 "rates": 0.2, "t_end": 24}
        snr = snr_summary(model, {"kind": "uniform", "c": 0.0528})
        assert snr["min_snr"] == pytest.approx(6.6, rel=0.01)
        assert snr["max_snr"] == pytest.approx(19.7, rel=0.01)

    def test_variants_run(self, tmp_path):
        base = small_stability_cfg(trials=1)
        cfg = {
            "kind": "low_snr", "seed": 3, "trials": 1,
            "variants": {
                "slow": {**base, "init": {"kind": "simple_cs", "n0": 50}},
            },
        }
        res = run_low_snr_experiments(cfg, tmp_path)
        assert "slow" in res
        assert res["slow"].snr is not None
        assert (tmp_path / "slow" / "lscs.csv").exists()
        assert (tmp_path / "slow" / "snr.json").exists()


class TestBoundValidationRunner:
    def test_small_sweep_sound(self, tmp_path):
        cfg = {
            "kind": "bound_validation",
            "m": 16, "n": 16, "support_size": 3, "delta_size": 1, "delta_e_size": 1,
            "lam": 0.5, "alpha": 0.25,
            "num_matrices": 1, "instances_per_matrix": 6,
            "seed": 9, "matrix_kind": "perturbed_orthonormal",
        }
        rep = run_bound_validation(cfg, tmp_path)
        assert rep["violations"] == []
        assert rep["verified"]["scan_bound"] > 0
        assert (tmp_path / "bound_validation.json").exists()

    def test_gaussian_instances_mostly_skipped(self):
        # plain Gaussian matrices at this size fail the hypotheses; the sweep
        # must skip them rather than assert anything
        cfg = {
            "kind": "bound_validation",
            "m": 16, "n": 8, "support_size": 3, "delta_size": 1, "delta_e_size": 1,
            "lam": 0.5, "alpha": 0.25,
            "num_matrices": 1, "instances_per_matrix": 4,
            "seed": 2, "matrix_kind": "gaussian",
        }
        rep = run_bound_validation(cfg)
        assert rep["violations"] == []
        assert rep["skipped"]["scan_bound"] + rep["verified"]["scan_bound"] == 4


class TestDeterminism:
    def test_static_rerun_binary_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_static_experiment(small_static_cfg(), a)
        run_static_experiment(small_static_cfg(), b)
        fa = a / "n20_sigma0.05" / "cs_residual.csv"
        fb = b / "n20_sigma0.05" / "cs_residual.csv"
        assert fa.read_bytes() == fb.read_bytes()

    def test_stability_rerun_binary_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_stability_experiment(small_stability_cfg(), a)
        run_stability_experiment(small_stability_cfg(), b)
        for name in ["lscs", "genie_ls", "simple_cs"]:
            assert (a / f"{name}.csv").read_bytes() == (b / f"{name}.csv").read_bytes()
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_different_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = small_static_cfg()
        run_static_experiment(cfg, a)
        cfg2 = dict(cfg, seed=99)
        run_static_experiment(cfg2, b)
        fa = (a / "n20_sigma0.05" / "cs_residual.csv").read_text()
        fb = (b / "n20_sigma0.05" / "cs_residual.csv").read_text()
        assert fa != fb


class TestCsvFormatting:
    def test_nine_significant_digits(self, tmp_path):
        row = MetricsRow(trial=0, t=0, method="x", nmse=0.123456789123, err_final=1e-12)
        path = tmp_path / "x.csv"
        write_method_csv(path, [row])
        body = path.read_text().splitlines()[1]
        assert "0.123456789" in body
        assert "1e-12" in body

    def test_empty_fields(self):
        row = MetricsRow(trial=0, t=0, method="x")
        assert row.to_csv_line() == "0,0,x,,,,,,"


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "lscs.cli", *args],
            capture_output=True, text=True,
        )

    def test_version(self):
        out = self.run_cli("version")
        assert out.returncode == 0
        assert out.stdout.strip()

    def test_run_static(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_static_cfg(trials=2)))
        out = self.run_cli("run", str(cfg_path), "--out", str(tmp_path / "out"))
        assert out.returncode == 0, out.stderr
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_trials_override(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_static_cfg(trials=5)))
        out = self.run_cli("run", str(cfg_path), "--out", str(tmp_path / "o"), "--trials", "1")
        assert out.returncode == 0, out.stderr
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["config"]["trials"] == 1

    def test_config_error_exit_code(self, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text("{\"kind\": \"static_table\"}")
        out = self.run_cli("run", str(cfg_path))
        assert out.returncode == 1

    def test_missing_file_exit_code(self):
        out = self.run_cli("run", "/nonexistent/x.json")
        assert out.returncode == 1

    def test_rip_table_roundtrip(self, tmp_path):
        cfg_path = tmp_path / "rip.json"
        cfg_path.write_text(json.dumps({
            "matrix": {"kind": "gaussian", "n": 6, "m": 10, "seed": 4},
            "delta": [1, 2], "theta": [[1, 2]], "mode": "exact",
        }))
        out_path = tmp_path / "table.json"
        out = self.run_cli("rip-table", str(cfg_path), "--out", str(out_path))
        assert out.returncode == 0, out.stderr
        doc = json.loads(out_path.read_text())
        assert "delta" in doc and "2" in doc["delta"]

    def test_check_stability(self, tmp_path):
        cfg_path = tmp_path / "chk.json"
        cfg_path.write_text(json.dumps({
            "model": {"m": 16, "s0": 3, "sa": 1, "d": 8, "r": 2, "big_m": 3.0,
                      "rates": 1.0, "t_end": 8},
            "context": {"n": 16, "lam": 0.05, "norm_A_1": 3.63, "noise_linf_bound": 0.0137},
            "rip_table": {
                "matrix": {"kind": "perturbed_orthonormal", "n": 16, "m": 16,
                           "seed": 5, "noise_scale": 0.02},
                "mode": "exact",
            },
            "f": 0, "d0": "scan", "alpha": 0.5,
        }))
        out = self.run_cli("check-stability", str(cfg_path))
        assert out.returncode == 0, out.stderr
        doc = json.loads(out.stdout)
        assert "min_d0" in doc

    def test_bound_validation_exit_code_on_clean_run(self, tmp_path):
        cfg_path = tmp_path / "bv.json"
        cfg_path.write_text(json.dumps({
            "kind": "bound_validation",
            "m": 16, "n": 16, "support_size": 3, "delta_size": 1, "delta_e_size": 1,
            "lam": 0.5, "alpha": 0.25, "num_matrices": 1, "instances_per_matrix": 3,
            "seed": 13, "matrix_kind": "perturbed_orthonormal",
        }))
        out = self.run_cli("run", str(cfg_path), "--out", str(tmp_path / "bv"))
        assert out.returncode == 0, out.stderr

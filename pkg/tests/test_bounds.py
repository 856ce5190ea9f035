import math

import numpy as np
import pytest

from lscs.bounds import (
    BoundContext,
    residual_bias_sqnorm_bound,
    recovery_constants,
    no_miss_residual_bound,
    simplified_residual_bound,
    compressibility_residual_bound,
    one_shot_recovery_bound,
    detection_guarantee_violations,
    no_false_deletion_guarantee_violations,
    extras_deletion_guarantee_violations,
    detected_support_ls_error_bound,
    ls_error_bound_grid,
    grid_is_monotone,
    find_min_d0,
    deletion_condition,
    detection_condition,
    no_false_deletion_condition,
    prescribed_alpha_del,
    required_rip_entries,
    stability_error_caps,
    residual_recovery_bound,
    check_stability_conditions,
)
from lscs.core import SupportSet
from lscs.filter import FilterConfig, FilterState, initial_ls_residual, lscs_step
from lscs.measurement import (
    InsufficientRipTable,
    RipTable,
    build_rip_table,
    gen_gaussian_matrix,
    gen_perturbed_orthonormal_matrix,
)
from lscs.sigmodel import SignalModelParams, generate
from lscs.solver import ls_on_support


def flat_table(delta=0.0, theta=0.0, max_s=16, max_pair=8) -> RipTable:
    table = RipTable("synthetic")
    for s in range(1, max_s + 1):
        table.set_delta(s, delta, True)
    for s in range(1, max_pair + 1):
        for sp in range(1, 2 * max_pair + 1):
            table.set_theta(s, sp, theta, True)
    return table


def make_ctx(table, n=10, m=50, lam=1.0, norm1=2.0, noise=None) -> BoundContext:
    if noise is None:
        noise = lam / norm1
    return BoundContext(rip=table, n=n, m=m, lam=lam, norm_A_1=norm1, noise_linf_bound=noise)


class TestConstants:
    def test_zero_table(self):
        cc = recovery_constants(1, flat_table())
        assert (cc.c2, cc.c3) == (48.0, 8.0)

    def test_quarter_values(self):
        cc = recovery_constants(1, flat_table(delta=0.25, theta=0.25))
        assert cc.c2 == pytest.approx(192.0)
        assert cc.c3 == pytest.approx(14.0)

    def test_divergence_near_one(self):
        prev = 0.0
        for gap in [0.5, 0.25, 0.1, 0.01]:
            cc = recovery_constants(1, flat_table(delta=1 - gap - 0.01, theta=0.01))
            assert cc.c2 > prev
            prev = cc.c2

    def test_denominator_error(self):
        with pytest.raises(ValueError):
            recovery_constants(1, flat_table(delta=0.7, theta=0.4))


class TestBetaBound:
    def test_zero_inputs(self):
        assert residual_bias_sqnorm_bound(0.0, 0.3, 5.0, 0.0) == 0.0

    def test_hand_value(self):
        assert residual_bias_sqnorm_bound(0.2, 0.5, 1.0, 0.0) == pytest.approx(0.32)

    def test_delta_validation(self):
        with pytest.raises(ValueError):
            residual_bias_sqnorm_bound(0.1, 1.0, 1.0, 1.0)

    def test_empirical_domination(self):
        # actual residual bias on the known part stays below the bound
        m = n = 16
        A = gen_perturbed_orthonormal_matrix(n, m, 31, noise_scale=0.2)
        table = build_rip_table(A, [4], [(4, 2)], mode="exact")
        rng = np.random.default_rng(32)
        for _ in range(20):
            support = SupportSet(rng.choice(m, 6, replace=False), m)
            missing = SupportSet(rng.choice(support.to_array(), 2, replace=False), m)
            known = support - missing
            x = np.zeros(m)
            x[support.to_array()] = rng.uniform(0.5, 2.0, 6) * rng.choice([-1, 1], 6)
            w = 0.05 * rng.standard_normal(n)
            x_init, _ = initial_ls_residual(A, known, A.entries @ x + w)
            beta_known = (x - x_init)[known.to_array()]
            bound = residual_bias_sqnorm_bound(
                table.theta(4, 2).value,
                table.delta(4).value,
                float(np.sum(x[missing.to_array()] ** 2)),
                float(w @ w),
            )
            assert float(beta_known @ beta_known) <= bound + 1e-9


class TestScanBound:
    def test_trivial_no_misses_no_noise(self):
        ctx = make_ctx(flat_table())
        res = residual_recovery_bound(ctx, 5, np.array([]), 0.0)
        assert res.applicable
        assert res.value == pytest.approx(48.0)  # C2(1) * 1 * lam^2
        assert res.argmin_s == 1

    def test_min_correctness(self):
        table = flat_table(delta=0.1, theta=0.2)
        ctx = make_ctx(table)
        x_delta = np.array([0.5, 1.5, -1.0])
        res = residual_recovery_bound(ctx, 5, x_delta, 0.3)
        theta = table.theta(5, 3).value
        xd_sq = float(x_delta @ x_delta)
        for s in range(1, 8 + 1):
            cc = recovery_constants(s, table)
            b = 8 * theta ** 2 * xd_sq + 4 * 0.3
            if s < 3:
                mags = np.sort(np.abs(x_delta))
                b += float(np.sum(mags[: 3 - s] ** 2))
            f_s = cc.c2 * s + cc.c3 * (8 - s) / s * b
            assert res.value <= f_s + 1e-12

    def test_monotone_in_delta_energy(self):
        ctx = make_ctx(flat_table(theta=0.2))
        small = residual_recovery_bound(ctx, 5, np.array([0.5, 0.5]), 0.1)
        large = residual_recovery_bound(ctx, 5, np.array([5.0, 5.0]), 0.1)
        assert large.value >= small.value

    def test_not_applicable_when_t_too_big(self):
        table = flat_table(delta=0.6)
        res = residual_recovery_bound(make_ctx(table), 4, np.array([1.0]), 0.0)
        assert not res.applicable
        assert any("S*" in r for r in res.reasons)

    def test_not_applicable_on_noise_budget(self):
        ctx = make_ctx(flat_table(), noise=10.0)
        res = residual_recovery_bound(ctx, 4, np.array([1.0]), 0.0)
        assert not res.applicable


class TestSingleScaleBound:
    def test_hand_values(self):
        ctx = make_ctx(flat_table(), n=10, lam=1.0, norm1=2.0)
        res = simplified_residual_bound(ctx, 5, 1, 0.0)
        assert res.applicable
        assert res.details["c_prime"] == pytest.approx(448.0)
        assert res.details["c_double_prime"] == pytest.approx(320.0)
        assert res.value == pytest.approx(448.0)  # theta = 0

    def test_single_miss_matches_scan_term_at_worst_noise(self):
        # with |Delta| = 1 the single-S bound is the S=1 term of the scan
        table = flat_table(delta=0.1, theta=0.2)
        ctx = make_ctx(table)
        xd = np.array([1.3])
        cor = simplified_residual_bound(ctx, 6, 1, float(xd @ xd))
        cc = recovery_constants(1, table)
        theta = table.theta(6, 1).value
        b = 8 * theta ** 2 * float(xd @ xd) + 4 * ctx.w_max_sq()
        f1 = cc.c2 * ctx.lam ** 2 + cc.c3 * 6.0 * b
        assert cor.value == pytest.approx(f1, rel=1e-12)

    def test_looser_than_scan_term(self):
        # for |Delta| >= 1 the single-S form never beats the scan evaluated
        # with worst-case noise energy
        table = flat_table(delta=0.1, theta=0.15)
        ctx = make_ctx(table)
        for size_delta in [1, 2, 3]:
            xd = np.linspace(1.0, 2.0, size_delta)
            cor = simplified_residual_bound(ctx, 6, size_delta, float(xd @ xd))
            thm = residual_recovery_bound(ctx, 6, xd, ctx.w_max_sq())
            assert cor.value >= thm.value - 1e-9

    def test_delta_zero_branch_rejected(self):
        res = simplified_residual_bound(make_ctx(flat_table()), 5, 0, 0.0)
        assert not res.applicable

    def test_b0(self):
        ctx = make_ctx(flat_table(), n=10, lam=1.0, norm1=2.0)
        res = no_miss_residual_bound(ctx, 5)
        # min over S <= 5 of 48 S + 8 (5-S)/S * 10; best at S=1: 48+320=368? S=2: 96+120=216
        values = [48 * s + 8 * (5 - s) / s * 10 for s in range(1, 6)]
        assert res.applicable
        assert res.value == pytest.approx(min(values))

    def test_b0_scan_never_exceeds_t(self):
        # S > |T| terms would be negative; they must not enter the minimum
        ctx = make_ctx(flat_table(), n=10, lam=1.0, norm1=2.0)
        res = no_miss_residual_bound(ctx, 1)
        assert res.value == pytest.approx(48.0)
        assert res.argmin_s == 1


class TestCsBound:
    def test_constant_magnitude_tail(self):
        ctx = make_ctx(flat_table(), lam=0.5)
        x = np.full(6, 1.5)
        res = one_shot_recovery_bound(ctx, x)
        for s in range(1, 7):
            cc = recovery_constants(s, ctx.rip)
            f_s = cc.c2 * s * 0.25 + cc.c3 * (6 - s) / s * (6 - s) * 1.5 ** 2
            assert res.value <= f_s + 1e-9

    def test_zero_signal(self):
        ctx = make_ctx(flat_table(), lam=1.0)
        res = one_shot_recovery_bound(ctx, np.array([]))
        assert not res.applicable  # no admissible S beats an empty scan cap

    def test_residual_route_beats_one_shot_under_comparison_regime(self):
        # |Delta| = |Delta_e| = 0.1 |N|, scan capped at 0.2 |N| via coverage,
        # theta^2 < 1/8, small noise, recent additions no larger than the rest
        size_n = 10
        table = RipTable("cmp")
        for s in [1, 2]:
            table.set_delta(2 * s, 0.1, True)
            table.set_theta(s, 2 * s, 0.3, True)
        for s in range(1, 16):
            table.set_delta(s, 0.1, True)
        table.set_theta(10, 1, 0.3, True)
        ctx = make_ctx(table, n=30, lam=0.1, norm1=2.0, noise=0.05)
        x_rest = np.full(size_n - 1, 1.0)
        x_delta = np.array([1.0])
        w_sq = 0.05   # <= ||x_rest(1)||^2 (1 - 8 theta^2)/4 = 0.07
        size_t = size_n + 1 - 1  # |N| + |Delta_e| - |Delta|

        theta = table.theta(size_t, 1).value
        for s in [1, 2]:
            cc = recovery_constants(s, table)
            b = 8 * theta ** 2 * float(x_delta @ x_delta) + 4 * w_sq
            if s < 1:
                b += 0.0
            f_res = cc.c2 * s * ctx.lam ** 2 + cc.c3 * (size_t + 1 - s) / s * b
            x_full = np.concatenate([x_rest, x_delta])
            mags = np.sort(np.abs(x_full))
            tail = float(np.sum(mags[: size_n - s] ** 2))
            f_cs = cc.c2 * s * ctx.lam ** 2 + cc.c3 * (size_n - s) / s * tail
            assert f_res <= f_cs


class TestCompressibilityBound:
    def test_small_b_drops_t_dependence(self):
        table = flat_table(delta=0.05, theta=0.1, max_pair=10)
        ctx = make_ctx(table)
        b = 1e-3
        small_t = compressibility_residual_bound(ctx, 2, 1, 4.0, b)
        large_t = compressibility_residual_bound(ctx, 9, 1, 4.0, b)
        assert small_t.value == pytest.approx(large_t.value)

    def test_large_b_reduces_to_single_scale_bound(self):
        table = flat_table(delta=0.05, theta=0.1)
        ctx = make_ctx(table)
        res = compressibility_residual_bound(ctx, 5, 1, 4.0, b=1e9)
        cor1 = simplified_residual_bound(ctx, 5, 1, 4.0)
        assert res.value == pytest.approx(cor1.value)

    def test_delta_zero_falls_back_to_b0(self):
        ctx = make_ctx(flat_table())
        res = compressibility_residual_bound(ctx, 5, 0, 0.0, b=0.1)
        b0 = no_miss_residual_bound(ctx, 5)
        assert res.value == pytest.approx(b0.value)


class TestConditionLemmas:
    def simple_ctx(self, theta=0.0):
        table = flat_table(theta=theta, max_s=8, max_pair=4)
        return make_ctx(table, n=10, lam=1.0, norm1=2.0)

    def test_detection_threshold_theta_zero(self):
        # denominator is 1; worst C' over |T| <= 2, |Delta| = 1 is at |T| = 2
        ctx = self.simple_ctx()
        det = detection_condition(ctx, 2, 1, alpha=0.1)
        c_prime_max = 48.0 + 4 * 8 * 2 * ctx.w_max_sq()
        assert det.applicable and det.gate_holds
        assert det.threshold_sq == pytest.approx(2 * 0.01 + 2 * c_prime_max)

    def test_detection_gate_failure(self):
        ctx = self.simple_ctx(theta=0.5)
        det = detection_condition(ctx, 4, 2, alpha=0.1)
        assert det.applicable
        assert not det.gate_holds
        assert det.threshold_sq == math.inf

    def test_deletion_threshold_theta_zero(self):
        ctx = self.simple_ctx()
        res = deletion_condition(ctx, 2, 1, 0, 0.0)
        assert res.threshold_sq == pytest.approx(4 * ctx.w_max_sq())
        # matches the squared prescribed deletion threshold
        assert prescribed_alpha_del(ctx) ** 2 == pytest.approx(res.threshold_sq)

    def test_no_false_deletion_threshold(self):
        ctx = self.simple_ctx()
        res = no_false_deletion_condition(ctx, 2, 1, 0, 0.0, alpha_del=0.0)
        assert res.threshold_sq == pytest.approx(8 * ctx.w_max_sq())

    def test_misses_term_dropped_when_empty(self):
        ctx = self.simple_ctx(theta=0.3)
        with_misses = deletion_condition(ctx, 2, 1, 1, 2.0)
        without = deletion_condition(ctx, 2, 1, 0, 2.0)
        assert without.threshold_sq == pytest.approx(4 * ctx.w_max_sq())
        assert with_misses.threshold_sq > without.threshold_sq


def generous_model(m=100, s0=6, sa=2, d=20, r=2, big_m=10.0, rate=5.0, t_end=40):
    return SignalModelParams(
        m=m, s0=s0, sa=sa, d=d, r=r, big_m=big_m,
        rates=np.full(m, rate), t_end=t_end, seed=0,
    )


def zero_rip_ctx(model, f, d0_max, n=50, lam=0.1, norm1=5.0):
    deltas, thetas = set(), set()
    for d0 in range(1, d0_max + 1):
        dd, tt = required_rip_entries(model, f, d0)
        deltas |= set(dd)
        thetas |= set(tt)
    table = RipTable("zero")
    for s in deltas:
        table.set_delta(s, 0.0, True)
    for s, sp in thetas:
        table.set_theta(s, sp, 0.0, True)
    return BoundContext(rip=table, n=n, m=model.m, lam=lam, norm_A_1=norm1,
                        noise_linf_bound=lam / norm1)


class TestStabilityConditions:
    def test_generous_config_passes(self):
        model = generous_model()
        ctx = zero_rip_ctx(model, f=1, d0_max=3)
        report = check_stability_conditions(model, ctx, f=1, d0=3, alpha=0.05)
        assert report.holds
        assert not report.optimistic

    def test_condition7_arithmetic(self):
        model = generous_model(d=8, sa=2, r=2)
        ctx = zero_rip_ctx(model, f=1, d0_max=7)
        for d0, expect in [(4, True), (5, False)]:
            report = check_stability_conditions(model, ctx, f=1, d0=d0, alpha=0.05)
            assert report.row("addition-spacing").holds is expect

    def test_condition6_isolated(self):
        # no additions; ramp almost as long as the period blows only the
        # decreasing-coefficient condition
        model = generous_model(s0=5, sa=0, d=10, r=9, big_m=1.0, rate=1.0, t_end=20)
        ctx = zero_rip_ctx(model, f=0, d0_max=1)
        report = check_stability_conditions(model, ctx, f=0, d0=1, alpha=0.05)
        failing = [r.identifier for r in report.rows if not r.holds and not r.assumed]
        assert failing == ["keep-decreasing-coefficients"]

    def test_wrong_alpha_del_flagged(self):
        model = generous_model()
        ctx = zero_rip_ctx(model, f=1, d0_max=3)
        report = check_stability_conditions(model, ctx, f=1, d0=3, alpha=0.05, alpha_del=99.0)
        assert not report.row("deletion-threshold").holds

    def test_missing_entries_listed(self):
        model = generous_model()
        ctx = BoundContext(rip=RipTable("empty"), n=50, m=model.m, lam=0.1,
                           norm_A_1=5.0, noise_linf_bound=0.01)
        with pytest.raises(InsufficientRipTable) as err:
            check_stability_conditions(model, ctx, f=1, d0=3, alpha=0.05)
        assert "delta_" in str(err.value)

    def test_find_min_d0(self):
        model = generous_model(d=8, sa=2, r=2)
        ctx = zero_rip_ctx(model, f=1, d0_max=7)
        d0, report = find_min_d0(model, ctx, f=1, alpha=0.05)
        assert d0 == 1
        assert report.holds

    def test_report_roundtrip(self):
        model = generous_model()
        ctx = zero_rip_ctx(model, f=1, d0_max=3)
        report = check_stability_conditions(model, ctx, f=1, d0=3, alpha=0.05)
        doc = report.to_json_dict()
        assert doc["holds"] is True
        assert any(r["identifier"] == "detection-gate" for r in doc["rows"])


class TestStabilityCaps:
    def test_hand_values(self):
        model = generous_model()
        ctx = zero_rip_ctx(model, f=1, d0_max=3)
        caps = stability_error_caps(model, ctx, f=1, d0=3)
        assert caps.applicable
        assert caps.miss_err_sq == pytest.approx(2 * min(10.0, 5 * 5.0) ** 2)
        assert caps.support_err_sq == pytest.approx(4 * ctx.w_max_sq())  # theta = 0

    def test_no_additions(self):
        model = generous_model(s0=5, sa=0, d=10, r=2, t_end=20)
        ctx = zero_rip_ctx(model, f=0, d0_max=1)
        caps = stability_error_caps(model, ctx, f=0, d0=1)
        assert caps.miss_err_sq == 0.0


class TestSmallScaleStabilityRun:
    """Exact-constants variant of the tracking run: the stability conditions
    verify, and the implied error caps hold at every step."""

    def test_caps_hold_on_every_step(self):
        m = n = 16
        A = gen_perturbed_orthonormal_matrix(n, m, seed=5, noise_scale=0.02)
        lam = 0.05
        w_linf = lam / A.induced_one_norm
        model = SignalModelParams(m=m, s0=3, sa=1, d=8, r=2, big_m=3.0,
                                  rates=np.full(m, 1.0), t_end=24, seed=99)
        f = 0
        deltas, thetas = set(), set()
        for d0 in range(1, model.d):
            dd, tt = required_rip_entries(model, f, d0)
            deltas |= set(dd)
            thetas |= set(tt)
        table = build_rip_table(A, sorted(deltas), sorted(thetas), mode="exact")
        ctx = BoundContext(rip=table, n=n, m=m, lam=lam,
                           norm_A_1=A.induced_one_norm, noise_linf_bound=w_linf)
        alpha = 0.5
        d0, report = find_min_d0(model, ctx, f, alpha)
        assert d0 is not None and report.holds and not report.optimistic
        caps = stability_error_caps(model, ctx, f, d0)
        assert caps.applicable and not caps.optimistic

        cfg = FilterConfig(lam=lam, alpha=alpha, alpha_del=prescribed_alpha_del(ctx))
        false_detects = 0
        for trial in range(5):
            rng = np.random.default_rng([1234, trial])
            seq = generate(SignalModelParams(
                m=m, s0=3, sa=1, d=8, r=2, big_m=3.0, rates=np.full(m, 1.0),
                t_end=24, seed=int(rng.integers(2 ** 62)),
            ))
            y0 = A.entries @ seq.signal_at(0) + rng.uniform(-w_linf, w_linf, n)
            state = FilterState(seq.support_at(0), ls_on_support(A, seq.support_at(0), y0), 0)
            for t in range(1, 25):
                x = seq.signal_at(t)
                y = A.entries @ x + rng.uniform(-w_linf, w_linf, n)
                state, diag = lscs_step(state, A, y, cfg, x_true=x)
                assert diag.failed_stage is None
                false_detects += len(diag.det_extras - diag.delta_e_pre)
                miss_idx = (diag.true_support - diag.final_support).to_array()
                assert float(np.sum(x[miss_idx] ** 2)) <= caps.miss_err_sq + 1e-9
                support_err = sum(
                    (x[i] - diag.x_final[i]) ** 2 for i in diag.final_support
                )
                assert support_err <= caps.support_err_sq + 1e-9
                assert diag.err_csres <= caps.csres_err_cap + 1e-9
        # condition 2 assumed at most f = 0 false detections per step
        assert false_detects == 0


class TestAppendixFacts:
    def run_step(self, seed, alpha=0.1, alpha_del=0.05, noise=0.05):
        A = gen_gaussian_matrix(20, 40, seed)
        rng = np.random.default_rng(seed + 1)
        support = SupportSet(rng.choice(40, 6, replace=False), 40)
        x = np.zeros(40)
        x[support.to_array()] = rng.uniform(1.0, 2.0, 6) * rng.choice([-1, 1], 6)
        known = SupportSet(rng.choice(support.to_array(), 4, replace=False), 40)
        y = A.entries @ x + noise * rng.standard_normal(20)
        cfg = FilterConfig(lam=0.2, alpha=alpha, alpha_del=alpha_del)
        state = FilterState(known, np.zeros(40), 0)
        _, diag = lscs_step(state, A, y, cfg, x_true=x)
        return diag, x, cfg

    def test_facts_never_violated(self):
        for seed in range(25):
            diag, x, cfg = self.run_step(seed)
            _, v1 = detection_guarantee_violations(diag, x, cfg.alpha)
            _, v2 = no_false_deletion_guarantee_violations(diag, x, cfg.alpha_del)
            _, v3 = extras_deletion_guarantee_violations(diag, x, cfg.alpha_del)
            assert v1 == [] and v2 == [] and v3 == []

    def test_fact_hypotheses_fire(self):
        fired = 0
        for seed in range(25):
            diag, x, cfg = self.run_step(seed)
            h1, _ = detection_guarantee_violations(diag, x, cfg.alpha)
            h2, _ = no_false_deletion_guarantee_violations(diag, x, cfg.alpha_del)
            fired += h1 + h2
        assert fired > 0  # the predicates are not vacuous on these instances

    def test_ls_bound_noiseless_true_support(self):
        table = flat_table()
        ctx = make_ctx(table, lam=0.0, noise=0.0)
        res = detected_support_ls_error_bound(ctx, 4, 0.0, 0)
        assert res.applicable
        assert res.value == 0.0

    def test_ls_bound_dominates_actual(self):
        m = n = 16
        A = gen_perturbed_orthonormal_matrix(n, m, 77, noise_scale=0.2)
        lam = 0.3
        w_linf = lam / A.induced_one_norm
        table = build_rip_table(A, [4, 5], [(4, 2), (5, 2), (4, 1), (5, 1)], mode="exact")
        ctx = BoundContext(rip=table, n=n, m=m, lam=lam,
                           norm_A_1=A.induced_one_norm, noise_linf_bound=w_linf)
        rng = np.random.default_rng(78)
        checked = 0
        for _ in range(30):
            support = SupportSet(rng.choice(m, 6, replace=False), m)
            x = np.zeros(m)
            x[support.to_array()] = rng.uniform(1.0, 2.0, 6) * rng.choice([-1, 1], 6)
            detected = SupportSet(rng.choice(support.to_array(), 4, replace=False), m)
            misses = support - detected
            y = A.entries @ x + rng.uniform(-w_linf, w_linf, n)
            x_det = ls_on_support(A, detected, y)
            actual = sum((x[i] - x_det[i]) ** 2 for i in detected)
            res = detected_support_ls_error_bound(
                ctx, len(detected), float(np.sum(x[misses.to_array()] ** 2)), len(misses)
            )
            if res.applicable:
                checked += 1
                assert actual <= res.value + 1e-9
        assert checked > 0

    def test_ls_bound_grid_monotone(self):
        table = RipTable("mono")
        for t_sz in range(1, 5):
            for d_sz in range(1, 4):
                table.set_theta(t_sz, d_sz, 0.05 * t_sz + 0.04 * d_sz, True)
        ctx = make_ctx(table)
        grid = ls_error_bound_grid(ctx, [1, 2, 3, 4], [1, 2, 3], linf=2.0)
        assert grid_is_monotone(grid)

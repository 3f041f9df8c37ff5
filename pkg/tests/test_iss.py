import math

import numpy as np
import pytest

from sie.core import ContinuousSignal
from sie.errors import FitDegenerate, PreconditionError
from sie.iss import (CellResult, IssSweepReport, SweepConfig, TrialSeries,
                     check_equivalence, fit_decay, fit_gain, run_sweep)
from tests.conftest import LN2, RIMLESS_EIG


def small_sweep(**kw):
    base = dict(offsets=(0.05,), u_amps=(0.0,), v_amps=(0.0,), trials=5,
                horizon_periods=30.0, transient_cutoff=0.5, seed=3)
    base.update(kw)
    return SweepConfig(**base)


class TestSweepConfig:
    def test_validation(self):
        with pytest.raises(PreconditionError):
            small_sweep(offsets=())
        with pytest.raises(PreconditionError):
            small_sweep(u_amps=(0.1, 0.0))
        with pytest.raises(PreconditionError):
            small_sweep(transient_cutoff=1.5)
        with pytest.raises(PreconditionError):
            small_sweep(u_amps=(0.0, 0.1), v_amps=(0.0,), pair_uv=True)

    def test_cells_cross_and_paired(self):
        cfg = small_sweep(u_amps=(0.0, 0.1), v_amps=(0.0, 0.2))
        assert len(cfg.cells()) == 4
        cfg = small_sweep(u_amps=(0.0, 0.1), v_amps=(0.0, 0.2), pair_uv=True)
        assert cfg.cells() == [(0.05, 0.0, 0.0), (0.05, 0.1, 0.2)]


class TestRunSweep:
    def test_constant_forcing_matches_forced_fixed_point(self, linear_sys, linear_orbit,
                                                         linear_report, sweep_cfg):
        sweep = small_sweep(u_amps=(0.0, 0.01, 0.1),
                            u_template=ContinuousSignal.constant([1.0]))
        report = run_sweep(linear_sys, linear_orbit, linear_report, sweep, sweep_cfg)
        for ua in (0.01, 0.1):
            cell = report.cell(0.05, ua, 0.0)
            assert cell.ultimate_discrete == pytest.approx(ua / LN2, rel=0.02)
        zero = report.cell(0.05, 0.0, 0.0)
        assert zero.ultimate_discrete < 2e-6

    def test_constant_impulses_match_geometric_sum(self, linear_sys, linear_orbit,
                                                   linear_report, sweep_cfg):
        # v == v0 at every crossing: fixed point e^-a v0 / (1 - e^-a) = v0
        from sie import hybrid
        from sie.core import DiscreteSequence

        for v0 in (0.01, 0.1):
            vbar = DiscreteSequence.constant([v0])
            traj = hybrid.simulate(linear_sys, np.array([0.0, 0.05]),
                                   ContinuousSignal.zero(1), vbar, 30.0,
                                   hybrid.GuardConfig(t_star=1.0), sweep_cfg)
            tail = [imp.x_minus[1] for imp in traj.impacts if imp.t >= 15.0]
            assert max(abs(x) for x in tail) == pytest.approx(v0, rel=0.02)

    def test_scale_equivariance_on_linear_model(self, linear_sys, linear_orbit,
                                                linear_report, sweep_cfg):
        sweep = small_sweep(u_amps=(0.02, 0.04),
                            u_template=ContinuousSignal.constant([1.0]))
        report = run_sweep(linear_sys, linear_orbit, linear_report, sweep, sweep_cfg)
        lo = report.cell(0.05, 0.02, 0.0).ultimate_discrete
        hi = report.cell(0.05, 0.04, 0.0).ultimate_discrete
        assert hi == pytest.approx(2.0 * lo, rel=0.05)

    def test_reproducible_with_same_seed(self, linear_sys, linear_orbit,
                                         linear_report, sweep_cfg):
        sweep = small_sweep(u_amps=(0.0, 0.05), trials=3, horizon_periods=25.0)
        a = run_sweep(linear_sys, linear_orbit, linear_report, sweep, sweep_cfg)
        b = run_sweep(linear_sys, linear_orbit, linear_report, sweep, sweep_cfg)
        for ca, cb in zip(a.cells, b.cells):
            assert ca.per_trial_orbital == cb.per_trial_orbital
            assert ca.per_trial_discrete == cb.per_trial_discrete

    def test_guard_tallies_zero_on_stable_cells(self, rimless_sys, rimless_orbit,
                                                rimless_report, sweep_cfg):
        sweep = small_sweep(u_amps=(0.0, 0.05), trials=4, horizon_periods=20.0)
        report = run_sweep(rimless_sys, rimless_orbit, rimless_report, sweep, sweep_cfg)
        for cell in report.cells:
            assert all(v == 0 for v in cell.guard_tallies.values())


class TestFitDecay:
    def test_linear_reset_ratio(self, linear_sys, linear_orbit, linear_report, sweep_cfg):
        report = run_sweep(linear_sys, linear_orbit, linear_report,
                           small_sweep(trials=5), sweep_cfg)
        fit = fit_decay(list(report.cells[0].series))
        assert fit.ratio == pytest.approx(0.5, abs=0.02)
        assert fit.rate == pytest.approx(LN2, abs=0.05)
        assert fit.interval_min > 0.0

    def test_rimless_ratio(self, rimless_sys, rimless_orbit, rimless_report, sweep_cfg):
        report = run_sweep(rimless_sys, rimless_orbit, rimless_report,
                           small_sweep(trials=5), sweep_cfg)
        fit = fit_decay(list(report.cells[0].series))
        assert fit.ratio == pytest.approx(RIMLESS_EIG, abs=0.05)
        # rate and ratio measured independently agree through the interval band
        lo = math.exp(-2.0 * fit.rate * fit.interval_max)
        hi = math.exp(-fit.rate * fit.interval_min / 2.0)
        assert lo <= fit.ratio <= hi

    def test_too_few_runs(self):
        with pytest.raises(FitDegenerate):
            fit_decay([])

    def test_floor_hit_raises(self):
        # deviations collapse to the floor after 3 crossings
        runs = []
        for _ in range(5):
            dev = np.array([1e-2, 1e-5, 1e-8] + [1e-12] * 20)
            runs.append(TrialSeries(impact_times=np.arange(23.0),
                                    discrete_dev=dev,
                                    window_times=np.arange(23.0),
                                    orbital_sup=dev))
        with pytest.raises(FitDegenerate):
            fit_decay(runs)


def _synthetic_cell(offset, ua, va, values):
    vals = tuple(float(v) for v in values)
    return CellResult(offset=offset, u_amp=ua, v_amp=va, trials=len(vals), seed=0,
                      ultimate_orbital=float(np.median(vals)),
                      ultimate_discrete=float(np.median(vals)),
                      peak=max(vals), per_trial_orbital=vals, per_trial_discrete=vals)


def _synthetic_report(cell_values):
    cells = tuple(_synthetic_cell(0.05, ua, 0.0, vals) for ua, vals in cell_values)
    return IssSweepReport(cells=cells, seed=0, trials=len(cells[0].per_trial_orbital),
                          horizon_periods=30.0, transient_cutoff=0.5, t_star=1.0)


class TestCheckEquivalence:
    def test_passes_on_monotone_data(self):
        rng = np.random.default_rng(0)
        report = _synthetic_report([
            (0.0, np.full(20, 1e-9)),
            (0.01, 0.01 + 0.001 * rng.standard_normal(20)),
            (0.1, 0.1 + 0.01 * rng.standard_normal(20)),
        ])
        verdict = check_equivalence(report)
        assert verdict.all_ok
        assert verdict.factor == pytest.approx(1.0)

    def test_negative_control_fails_monotonicity(self):
        rng = np.random.default_rng(1)
        report = _synthetic_report([
            (0.0, np.full(20, 1e-9)),
            (0.01, 0.5 + 0.001 * rng.standard_normal(20)),
            (0.1, 0.05 + 0.001 * rng.standard_normal(20)),  # decreasing: injected defect
        ])
        verdict = check_equivalence(report)
        assert not verdict.monotone_ok
        assert not verdict.all_ok

    def test_zero_floor_violation_detected(self):
        report = _synthetic_report([(0.0, np.full(20, 1e-3))])
        verdict = check_equivalence(report)
        assert not verdict.zero_floor_ok

    def test_factor_reported_cellwise(self):
        cells = (
            _synthetic_cell(0.05, 0.0, 0.0, np.full(10, 1e-9)),
            CellResult(offset=0.05, u_amp=0.1, v_amp=0.0, trials=10, seed=0,
                       ultimate_orbital=0.3, ultimate_discrete=0.1, peak=0.3,
                       per_trial_orbital=tuple(np.full(10, 0.3)),
                       per_trial_discrete=tuple(np.full(10, 0.1))),
        )
        report = IssSweepReport(cells=cells, seed=0, trials=10, horizon_periods=30.0,
                                transient_cutoff=0.5, t_star=1.0)
        verdict = check_equivalence(report, factor_limit=10.0)
        assert verdict.factor == pytest.approx(3.0)
        assert verdict.factor_ok
        verdict = check_equivalence(report, factor_limit=2.0)
        assert not verdict.factor_ok


def test_gain_fit_recovers_linear_slope(linear_sys, linear_orbit, linear_report, sweep_cfg):
    # ultimate discrete bound is u / ln 2 for constant forcing, so the gain
    # line through the origin has slope 1 / ln 2
    sweep = small_sweep(u_amps=(0.0, 0.02, 0.05, 0.1),
                        u_template=ContinuousSignal.constant([1.0]))
    report = run_sweep(linear_sys, linear_orbit, linear_report, sweep, sweep_cfg)
    fit = fit_gain(report, statistic="discrete", axis="u")
    assert fit.slope == pytest.approx(1.0 / LN2, rel=0.02)
    assert fit.residual <= 0.02 * fit.slope * 0.1


def test_gain_fit_validation():
    report = _synthetic_report([(0.0, np.full(5, 1e-9))])
    with pytest.raises(PreconditionError):
        fit_gain(report)


def test_linear_reset_equivalence_clauses(linear_sys, linear_orbit, linear_report, sweep_cfg):
    sweep = small_sweep(u_amps=(0.0, 0.02, 0.05), trials=6, horizon_periods=44.0,
                        u_template=ContinuousSignal.sinusoid([1.0], omega=4.0))
    report = run_sweep(linear_sys, linear_orbit, linear_report, sweep, sweep_cfg)
    verdict = check_equivalence(report)
    assert verdict.monotone_ok
    assert verdict.zero_floor_ok
    assert verdict.factor <= 3.0

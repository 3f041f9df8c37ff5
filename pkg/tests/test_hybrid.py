import math

import numpy as np
import pytest

from sie.core import ContinuousSignal, DiscreteSequence, HybridSystemDef
from sie.errors import NoImpacts, PreconditionError
from sie.events import time_to_impact
from sie.flow import IntegratorConfig
from sie.hybrid import GuardConfig, poincare_sequence, simulate
from sie import models
from tests.conftest import RIMLESS_EIG, RIMLESS_OMEGA_STAR, RIMLESS_T_STAR

U0 = ContinuousSignal.zero(1)
V0 = DiscreteSequence.zero(1)


class TestLinearResetRun:
    def test_impact_log_matches_closed_form(self, linear_sys):
        traj = simulate(linear_sys, np.array([0.0, 0.3]), U0, V0, 5.0)
        assert traj.termination == "horizon-reached"
        assert len(traj.impacts) == 5
        for k, imp in enumerate(traj.impacts):
            assert imp.t == pytest.approx(k + 1.0, abs=1e-9)
            assert imp.x_minus[0] == pytest.approx(1.0, abs=1e-9)
            # x2 halves at every crossing: 0.15, 0.075, ...
            assert imp.x_minus[1] == pytest.approx(0.3 * 0.5 ** (k + 1), abs=1e-9)
            assert imp.x_plus[0] == pytest.approx(0.0, abs=1e-12)

    def test_right_continuity_at_impacts(self, linear_sys):
        traj = simulate(linear_sys, np.array([0.0, 0.3]), U0, V0, 2.5)
        t0 = traj.impacts[0].t
        # the stored value at the impact instant is the post-reset state
        assert np.allclose(traj.eval(t0), traj.impacts[0].x_plus, atol=1e-12)
        # the left limit approaches the pre-impact state
        assert np.allclose(traj.eval(t0 - 1e-9), traj.impacts[0].x_minus, atol=1e-6)

    def test_start_on_orbit_stays_on_orbit(self, linear_sys, linear_orbit):
        from sie.orbit import dist_to_orbit

        x0 = linear_sys.eval_delta(np.array([1.0, 0.0]), np.zeros(1))
        traj = simulate(linear_sys, x0, U0, V0, 6.0)
        for t in np.linspace(0.0, 6.0, 60):
            d, _ = dist_to_orbit(linear_orbit, traj.eval(float(t)))
            assert d <= 1e-7

    def test_on_surface_start_consumes_first_impulse(self, linear_sys):
        vbar = DiscreteSequence.explicit([[0.5], [0.0], [0.0], [0.0], [0.0], [0.0]])
        traj = simulate(linear_sys, np.array([1.0, 0.1]), U0, vbar, 1.5)
        assert traj.impacts[0].t == 0.0
        assert traj.impacts[0].x_plus[1] == pytest.approx(0.6)
        # next crossing sees the second (zero) impulse
        assert traj.impacts[1].v[0] == 0.0

    def test_below_surface_start_rejected(self, linear_sys):
        with pytest.raises(PreconditionError):
            simulate(linear_sys, np.array([1.5, 0.0]), U0, V0, 1.0)


class TestPoincareSequence:
    def test_geometric_sequence(self, linear_sys):
        traj = simulate(linear_sys, np.array([0.0, 0.3]), U0, V0, 5.0)
        seq = poincare_sequence(traj)
        x2 = [x[1] for _, x in seq]
        assert np.allclose(x2, [0.15, 0.075, 0.0375, 0.01875, 0.009375], atol=1e-9)

    def test_no_impacts_raises(self, linear_sys):
        traj = simulate(linear_sys, np.array([0.0, 0.0]), U0, V0, 0.5)
        with pytest.raises(NoImpacts):
            poincare_sequence(traj)

    def test_rimless_contracts_exactly_in_energy_coordinates(self, rimless_sys):
        # the section map is affine in z = omega^2 with slope cos^2(2 alpha)
        traj = simulate(rimless_sys, np.array([0.08 - math.pi / 8.0, 1.2]), U0, V0, 12.0)
        seq = poincare_sequence(traj)
        z = np.array([x[1] ** 2 for _, x in seq]) - RIMLESS_OMEGA_STAR ** 2
        ratios = z[1:6] / z[:5]
        assert np.allclose(ratios, RIMLESS_EIG, atol=1e-6)


class TestGuards:
    def test_bouncing_ball_zeno(self):
        sysd = models.model("bouncing-ball")
        traj = simulate(sysd, np.array([1.0, 0.0]), U0, V0, 10.0)
        assert traj.termination == "zeno-guard"
        ts = traj.impact_times()
        assert ts[0] == pytest.approx(math.sqrt(2.0 / 9.81), abs=1e-9)
        # impact intervals halve with the restitution coefficient
        ratios = np.diff(ts)[1:] / np.diff(ts)[:-1]
        assert np.allclose(ratios, 0.5, atol=1e-6)

    def test_k_max_guard(self, linear_sys):
        traj = simulate(linear_sys, np.array([0.0, 0.3]), U0, V0, 10.0,
                        GuardConfig(k_max=3))
        assert traj.termination == "zeno-guard"
        assert len(traj.impacts) == 4

    def test_beating_guard_on_wrong_side_reset(self):
        sysd = HybridSystemDef(n=2, p=1, q=1,
                               f=lambda x, u: np.array([1.0, 0.0]),
                               delta=lambda x, v: np.array([1.5, x[1]]),  # lands in H < 0
                               h=lambda x: 1.0 - float(x[0]))
        traj = simulate(sysd, np.array([0.0, 0.0]), U0, V0, 3.0)
        assert traj.termination == "beating-guard"

    def test_escape_on_blowup(self):
        sysd = HybridSystemDef(n=1, p=1, q=1,
                               f=lambda x, u: np.array([x[0] ** 2]),
                               delta=lambda x, v: x, h=lambda x: float(x[0]) + 10.0)
        traj = simulate(sysd, np.array([1.0]), U0, V0, 2.0,
                        cfg=IntegratorConfig(blowup=1e6))
        assert traj.termination == "escape"
        assert traj.segments  # partial flow retained

    def test_guards_quiet_on_stable_run(self, rimless_sys, rimless_report):
        u = ContinuousSignal.sinusoid([0.02], omega=4.0)
        vbar = DiscreteSequence.iid_uniform(0.005, seed=12, dim=1)
        t_final = 12.0 * RIMLESS_T_STAR
        traj = simulate(rimless_sys, np.array([0.08 - math.pi / 8.0, 1.1]), u, vbar,
                        t_final, GuardConfig(t_star=rimless_report.t_star))
        assert traj.termination == "horizon-reached"
        # impact count tracks the horizon in periods
        assert abs(len(traj.impacts) - 12) <= 2


def test_replaying_impacts_through_time_to_impact(linear_sys):
    u = ContinuousSignal.sinusoid([0.05], omega=4.0)
    vbar = DiscreteSequence.iid_uniform(0.02, seed=5, dim=1)
    traj = simulate(linear_sys, np.array([0.0, 0.2]), u, vbar, 4.5)
    assert len(traj.impacts) >= 4
    for a, b in zip(traj.impacts[:-1], traj.impacts[1:]):
        out = time_to_impact(linear_sys, a.x_minus, u.shifted(a.t), vbar[a.k], t_cap=3.0)
        assert out.time == pytest.approx(b.t - a.t, abs=1e-9)


def test_segments_join_at_reset_states(linear_sys):
    traj = simulate(linear_sys, np.array([0.0, 0.3]), U0, V0, 3.5)
    for imp, seg in zip(traj.impacts, traj.segments[1:]):
        assert seg.t0 == imp.t
        assert np.allclose(seg.eval(seg.t0), imp.x_plus, atol=1e-12)


def test_every_impact_on_surface_and_transversal(rimless_sys):
    u = ContinuousSignal.sinusoid([0.05], omega=4.0)
    vbar = DiscreteSequence.iid_uniform(0.01, seed=21, dim=1)
    traj = simulate(rimless_sys, np.array([0.08 - math.pi / 8.0, 1.1]), u, vbar,
                    10.0, GuardConfig(t_star=RIMLESS_T_STAR))
    assert traj.termination == "horizon-reached"
    assert len(traj.impacts) >= 5
    for imp in traj.impacts:
        scale = max(1.0, float(np.max(np.abs(imp.x_minus))))
        assert abs(rimless_sys.eval_h(imp.x_minus)) <= 1e-10 * scale
        assert rimless_sys.lie_h(imp.x_minus, u(imp.t)) < 0.0
        assert rimless_sys.eval_h(imp.x_plus) > 0.0

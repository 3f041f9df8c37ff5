"""Empirical input-to-state stability experiments.

A sweep runs seeded trials over a grid of initial offsets and input
amplitudes, records the discrete deviation at each section crossing and the
supremum orbital deviation over each inter-crossing window, and summarizes
each cell by the median (over trials) of the post-transient maximum.  Decay
rates on zero-input runs are fitted with the exponential ansatz that strict
contraction of the section map justifies; gains are summarized by the
linear fit through the origin that the local theory suggests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .core import ContinuousSignal, DiscreteSequence, HybridSystemDef
from .errors import FitDegenerate, PreconditionError
from .flow import IntegratorConfig
from .hybrid import GuardConfig, HybridTrajectory, simulate
from .orbit import PeriodicOrbit, refine_distance
from .poincare import StabilityReport

_ZERO_FLOOR = 1e-6
_REFINE_BELOW = 5e-2  # refine the polyline distance once deviations are small


@dataclass(frozen=True)
class SweepConfig:
    offsets: tuple[float, ...]
    u_amps: tuple[float, ...]
    v_amps: tuple[float, ...]
    trials: int = 20
    horizon_periods: float = 30.0
    transient_cutoff: float = 0.5
    seed: int = 0
    u_template: ContinuousSignal | None = None  # unit-amplitude shape; default sinusoid omega=4
    samples_per_step: int = 24
    pair_uv: bool = False  # zip u_amps with v_amps instead of crossing them

    def __post_init__(self):
        for name in ("offsets", "u_amps", "v_amps"):
            vals = getattr(self, name)
            if not vals:
                raise PreconditionError(f"{name} must be non-empty")
            if any(v < 0 for v in vals) or list(vals) != sorted(vals):
                raise PreconditionError(f"{name} must be nonnegative and ascending")
        if not (0.0 < self.transient_cutoff < 1.0):
            raise PreconditionError("transient_cutoff must lie in (0, 1)")
        if self.trials < 1 or self.horizon_periods <= 0:
            raise PreconditionError("trials and horizon must be positive")
        if self.pair_uv and len(self.u_amps) != len(self.v_amps):
            raise PreconditionError("pair_uv needs matching u_amps and v_amps lengths")

    def cells(self) -> list[tuple[float, float, float]]:
        if self.pair_uv:
            return [(o, ua, va) for o in self.offsets
                    for ua, va in zip(self.u_amps, self.v_amps)]
        return [(o, ua, va) for o in self.offsets
                for ua in self.u_amps for va in self.v_amps]


@dataclass(frozen=True)
class TrialSeries:
    """Raw per-trial deviation records kept for decay fits and bootstraps."""

    impact_times: np.ndarray
    discrete_dev: np.ndarray       # ||x_k - x*|| at each crossing
    window_times: np.ndarray       # left edge of each inter-crossing window
    orbital_sup: np.ndarray        # sup of dist(x(t), orbit) over each window


@dataclass(frozen=True)
class CellResult:
    offset: float
    u_amp: float
    v_amp: float
    trials: int
    seed: int
    ultimate_orbital: float
    ultimate_discrete: float
    peak: float
    per_trial_orbital: tuple[float, ...]
    per_trial_discrete: tuple[float, ...]
    guard_tallies: dict = field(default_factory=dict)
    series: tuple[TrialSeries, ...] = ()


@dataclass(frozen=True)
class IssSweepReport:
    cells: tuple[CellResult, ...]
    seed: int
    trials: int
    horizon_periods: float
    transient_cutoff: float
    t_star: float

    def cell(self, offset: float, u_amp: float, v_amp: float) -> CellResult:
        for c in self.cells:
            if (c.offset, c.u_amp, c.v_amp) == (offset, u_amp, v_amp):
                return c
        raise KeyError((offset, u_amp, v_amp))


def _orbital_deviation(orbit: PeriodicOrbit, x: np.ndarray) -> float:
    chord = orbit.coarse_distances(x)
    d = float(np.min(chord))
    if d < _REFINE_BELOW:
        # the chord value carries the polyline sag; sharpen it on the
        # interpolant so decay fits stay clean near the numerical floor
        d = min(refine_distance(orbit, x, int(np.argmin(chord))),
                float(np.linalg.norm(x - orbit.points[0])),
                float(np.linalg.norm(x - orbit.x_star)))
    return d


def _window_sup(orbit: PeriodicOrbit, traj: HybridTrajectory, t_lo: float,
                t_hi: float, n_samples: int) -> float:
    # half-open window [t_k, t_{k+1}): at the right edge the right-continuous
    # trajectory already holds the next window's post-reset state
    ts = np.linspace(t_lo, t_hi, n_samples, endpoint=False)
    sup = 0.0
    for t in ts:
        sup = max(sup, _orbital_deviation(orbit, traj.eval(t)))
    return sup


def _initial_state(orbit: PeriodicOrbit, sys: HybridSystemDef, offset: float,
                   rng: np.random.Generator) -> np.ndarray:
    from .events import surface_tol

    for _ in range(32):
        tau = rng.uniform(0.0, orbit.t_star)
        base = orbit.eval(tau)
        direction = rng.normal(size=sys.n)
        nrm = float(np.linalg.norm(direction))
        if nrm == 0.0:
            continue
        x0 = base + (offset / nrm) * direction
        if sys.eval_h(x0) > surface_tol(x0):
            return x0
        x0 = base - (offset / nrm) * direction
        if sys.eval_h(x0) > surface_tol(x0):
            return x0
    raise PreconditionError(f"could not place an initial state at offset {offset}")


def _trial_inputs(sys: HybridSystemDef, sweep: SweepConfig, u_amp: float,
                  v_amp: float, trial_seed: int,
                  rng: np.random.Generator) -> tuple[ContinuousSignal, DiscreteSequence]:
    template = sweep.u_template or ContinuousSignal.sinusoid([1.0] + [0.0] * (sys.p - 1), omega=4.0)
    u = template.scaled(u_amp)
    if template.kind == "sinusoid" and template.omega > 0.0:
        u = u.shifted(rng.uniform(0.0, 2.0 * math.pi / template.omega))
    vbar = DiscreteSequence.iid_uniform(v_amp, seed=trial_seed, dim=sys.q)
    return u, vbar


def run_sweep(sys: HybridSystemDef, orbit: PeriodicOrbit, report: StabilityReport,
              sweep: SweepConfig, cfg: IntegratorConfig | None = None,
              keep_series: str = "zero") -> IssSweepReport:
    """Simulate every cell of the sweep grid and summarize deviations.

    Guard terminations are tallied per cell, never aborting the sweep.  The
    per-trial RNG is derived from (seed, cell, trial) so results do not
    depend on execution order.  keep_series: 'zero' keeps raw deviation
    series only for zero-input cells (enough for decay fits), 'all' for
    every cell, 'none' for none.
    """
    cfg = cfg or IntegratorConfig()
    x_star = report.x_star
    t_star = report.t_star
    t_final = sweep.horizon_periods * t_star
    t_post = sweep.transient_cutoff * t_final
    guards = GuardConfig(t_star=t_star)
    cells: list[CellResult] = []
    for cell_index, (offset, u_amp, v_amp) in enumerate(sweep.cells()):
        trial_orb: list[float] = []
        trial_disc: list[float] = []
        peak = 0.0
        tallies = {"zeno-guard": 0, "beating-guard": 0, "escape": 0, "error": 0}
        series: list[TrialSeries] = []
        keep = keep_series == "all" or (keep_series == "zero" and u_amp == 0.0 and v_amp == 0.0)
        for trial in range(sweep.trials):
            tseed = _rng.derive_seed(sweep.seed, cell_index, trial)
            rng = np.random.default_rng(tseed)
            x0 = _initial_state(orbit, sys, offset, rng)
            u, vbar = _trial_inputs(sys, sweep, u_amp, v_amp, tseed, rng)
            traj = simulate(sys, x0, u, vbar, t_final, guards, cfg)
            if traj.termination != "horizon-reached":
                tallies[traj.termination] = tallies.get(traj.termination, 0) + 1
                continue
            t_imp = traj.impact_times()
            disc = np.array([float(np.linalg.norm(imp.x_minus - x_star)) for imp in traj.impacts])
            edges = np.concatenate([[0.0], t_imp, [traj.t_final]])
            w_times = edges[:-1]
            orb = np.array([
                _window_sup(orbit, traj, edges[i], edges[i + 1], sweep.samples_per_step)
                for i in range(len(edges) - 1)
            ])
            mask_d = t_imp >= t_post
            mask_o = w_times >= t_post
            if not mask_d.any() or not mask_o.any():
                # the trial stopped returning to the surface (left the basin
                # of the hybrid orbit) or the horizon is too short; tally it
                # like a guard outcome rather than aborting the sweep
                tallies["no-post-transient"] = tallies.get("no-post-transient", 0) + 1
                continue
            trial_disc.append(float(np.max(disc[mask_d])))
            trial_orb.append(float(np.max(orb[mask_o])))
            peak = max(peak, float(np.max(orb)), float(np.max(disc)))
            if keep:
                series.append(TrialSeries(impact_times=t_imp, discrete_dev=disc,
                                          window_times=w_times, orbital_sup=orb))
        cells.append(CellResult(
            offset=offset, u_amp=u_amp, v_amp=v_amp, trials=sweep.trials,
            seed=sweep.seed,
            ultimate_orbital=float(np.median(trial_orb)) if trial_orb else math.nan,
            ultimate_discrete=float(np.median(trial_disc)) if trial_disc else math.nan,
            peak=peak,
            per_trial_orbital=tuple(trial_orb),
            per_trial_discrete=tuple(trial_disc),
            guard_tallies=tallies,
            series=tuple(series),
        ))
    return IssSweepReport(cells=tuple(cells), seed=sweep.seed, trials=sweep.trials,
                          horizon_periods=sweep.horizon_periods,
                          transient_cutoff=sweep.transient_cutoff, t_star=t_star)


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFit:
    """Exponential-ansatz fit of zero-input deviation decay.

    Orbital: deviation <= prefactor * exp(-rate * t) * deviation(0).
    Discrete: deviation_k <= prefactor_disc * ratio**k * deviation_0, with
    ratio = exp(-discrete rate).
    """

    prefactor: float
    rate: float
    residual: float
    prefactor_disc: float
    ratio: float
    residual_disc: float
    interval_min: float
    interval_max: float


def _fit_loglinear(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    logs = np.log(ys)
    A = np.vstack([xs, np.ones_like(xs)]).T
    coef, *_ = np.linalg.lstsq(A, logs, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = float(np.sqrt(np.mean((A @ coef - logs) ** 2)))
    return slope, intercept, resid


def fit_decay(runs: list[TrialSeries], floor: float = 1e-9) -> DecayFit:
    """Least-squares exponential fits on zero-input runs, orbital and
    discrete, after clipping points at or below the numerical floor.

    Needs at least 5 runs with at least 10 usable crossings each.
    """
    if len(runs) < 5:
        raise FitDegenerate(f"need at least 5 runs, got {len(runs)}")

    def _usable(series: np.ndarray) -> np.ndarray:
        # trim both the hard floor and the flattened tail where the decay
        # has bottomed out on integration noise, which would bias the slope
        floor_eff = max(floor, 5.0 * float(np.min(series)))
        keep = series > floor_eff
        past_min = np.zeros_like(keep)
        past_min[int(np.argmin(series)):] = True
        return keep & ~past_min

    slopes_o, prefs_o, resid_o = [], [], []
    slopes_d, prefs_d, resid_d = [], [], []
    intervals = []
    for run in runs:
        keep_d = _usable(run.discrete_dev)
        keep_o = _usable(run.orbital_sup)
        if int(np.sum(keep_d)) < 10 or int(np.sum(keep_o)) < 10:
            raise FitDegenerate(
                "fewer than 10 crossings above the numerical floor; re-run with a larger offset")
        ks = np.flatnonzero(keep_d).astype(float)
        sd, bd, rd = _fit_loglinear(ks, run.discrete_dev[keep_d])
        ts = run.window_times[keep_o]
        so, bo, ro = _fit_loglinear(ts, run.orbital_sup[keep_o])
        dev0_d = run.discrete_dev[keep_d][0]
        dev0_o = run.orbital_sup[keep_o][0]
        slopes_d.append(sd)
        prefs_d.append(math.exp(bd) / dev0_d)
        resid_d.append(rd)
        slopes_o.append(so)
        prefs_o.append(math.exp(bo) / dev0_o)
        resid_o.append(ro)
        if len(run.impact_times) >= 2:
            gaps = np.diff(run.impact_times)
            intervals.extend([float(np.min(gaps)), float(np.max(gaps))])
    rate = -float(np.mean(slopes_o))
    rate_d = -float(np.mean(slopes_d))
    return DecayFit(
        prefactor=float(np.median(prefs_o)),
        rate=rate,
        residual=float(np.max(resid_o)),
        prefactor_disc=float(np.median(prefs_d)),
        ratio=math.exp(-rate_d),
        residual_disc=float(np.max(resid_d)),
        interval_min=float(np.min(intervals)),
        interval_max=float(np.max(intervals)),
    )


@dataclass(frozen=True)
class GainFit:
    """Linear gain summary: ultimate bound ~ slope * amplitude, fitted
    through the origin (local theory gives linear bounds in the inputs)."""

    slope: float
    residual: float
    statistic: str
    axis: str


def fit_gain(report: IssSweepReport, statistic: str = "discrete",
             axis: str = "u") -> GainFit:
    """Least-squares line through the origin of ultimate bound against one
    input-amplitude axis, over cells where the other axis is smallest."""
    if statistic not in ("discrete", "orbital"):
        raise PreconditionError("statistic must be 'discrete' or 'orbital'")
    if axis not in ("u", "v"):
        raise PreconditionError("axis must be 'u' or 'v'")
    other = (lambda c: c.v_amp) if axis == "u" else (lambda c: c.u_amp)
    amp = (lambda c: c.u_amp) if axis == "u" else (lambda c: c.v_amp)
    usable = [c for c in report.cells if not math.isnan(getattr(c, f"ultimate_{statistic}"))]
    if not usable:
        raise PreconditionError("no usable cells")
    floor_other = min(other(c) for c in usable)
    pts = [(amp(c), getattr(c, f"ultimate_{statistic}"))
           for c in usable if other(c) == floor_other and amp(c) > 0.0]
    if len(pts) < 2:
        raise PreconditionError("need at least two nonzero-amplitude cells on the axis")
    a = np.array([p[0] for p in pts])
    b = np.array([p[1] for p in pts])
    slope = float(a @ b / (a @ a))
    resid = float(np.sqrt(np.mean((b - slope * a) ** 2)))
    return GainFit(slope=slope, residual=resid, statistic=statistic, axis=axis)


# ---------------------------------------------------------------------------
# equivalence verdict


@dataclass(frozen=True)
class PairCheck:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    statistic: str  # orbital | discrete
    median_low: float
    median_high: float
    ci_low: float  # 5th percentile of bootstrap median difference (high - low)
    ok: bool


@dataclass(frozen=True)
class EquivalenceVerdict:
    monotone_ok: bool
    factor_ok: bool
    zero_floor_ok: bool
    factor: float
    factor_by_cell: tuple[tuple[tuple[float, float, float], float], ...]
    pair_checks: tuple[PairCheck, ...]
    floor: float

    @property
    def all_ok(self) -> bool:
        return self.monotone_ok and self.factor_ok and self.zero_floor_ok


def _bootstrap_median_diff(low: np.ndarray, high: np.ndarray, seed: int,
                           n_boot: int = 300) -> float:
    rng = np.random.default_rng(seed)
    diffs = np.empty(n_boot)
    for b in range(n_boot):
        lo = rng.choice(low, size=len(low), replace=True)
        hi = rng.choice(high, size=len(high), replace=True)
        diffs[b] = np.median(hi) - np.median(lo)
    return float(np.quantile(diffs, 0.05))


def check_equivalence(report: IssSweepReport, floor: float = _ZERO_FLOOR,
                      factor_limit: float = 10.0) -> EquivalenceVerdict:
    """Three clauses on a completed sweep:

    (a) both ultimate-bound families are monotone nondecreasing along each
        input-amplitude axis, judged by bootstrap medians over trials;
    (b) orbital and discrete ultimate bounds agree within a multiplicative
        factor cell-wise (reported, compared against factor_limit);
    (c) zero-input cells sit at the numerical floor.
    """
    cells = {(c.offset, c.u_amp, c.v_amp): c for c in report.cells}
    pair_checks: list[PairCheck] = []
    monotone_ok = True
    keys = sorted(cells)

    def _dominates(lo, hi) -> bool:
        return lo != hi and lo[0] == hi[0] and lo[1] <= hi[1] and lo[2] <= hi[2]

    for i, key_lo in enumerate(keys):
        for key_hi in keys:
            # compare amplitude-adjacent cells: hi dominates lo componentwise
            # with no third cell strictly between (covers both cross-product
            # grids and zipped amplitude pairs)
            if not _dominates(key_lo, key_hi):
                continue
            if any(_dominates(key_lo, k) and _dominates(k, key_hi) for k in keys):
                continue
            lo_c, hi_c = cells[key_lo], cells[key_hi]
            for stat in ("orbital", "discrete"):
                lo_vals = np.array(getattr(lo_c, f"per_trial_{stat}"))
                hi_vals = np.array(getattr(hi_c, f"per_trial_{stat}"))
                if len(lo_vals) == 0 or len(hi_vals) == 0:
                    continue
                m_lo = float(np.median(lo_vals))
                m_hi = float(np.median(hi_vals))
                ci = _bootstrap_median_diff(lo_vals, hi_vals,
                                            _rng.derive_seed(report.seed, i, len(pair_checks)))
                ok = (m_hi >= m_lo) or (ci >= -(floor + 1e-12))
                monotone_ok = monotone_ok and ok
                pair_checks.append(PairCheck(lower=key_lo, upper=key_hi, statistic=stat,
                                             median_low=m_lo, median_high=m_hi,
                                             ci_low=ci, ok=ok))
    factor = 0.0
    factor_by_cell: list[tuple[tuple[float, float, float], float]] = []
    zero_ok = True
    for key, c in cells.items():
        if c.u_amp == 0.0 and c.v_amp == 0.0:
            zero_ok = zero_ok and c.ultimate_orbital <= floor and c.ultimate_discrete <= floor
            continue
        if math.isnan(c.ultimate_orbital) or math.isnan(c.ultimate_discrete):
            continue
        if c.ultimate_orbital <= floor and c.ultimate_discrete <= floor:
            continue
        lo = max(min(c.ultimate_orbital, c.ultimate_discrete), floor * 1e-3)
        f = max(c.ultimate_orbital, c.ultimate_discrete) / lo
        factor = max(factor, f)
        factor_by_cell.append((key, f))
    return EquivalenceVerdict(
        monotone_ok=monotone_ok,
        factor_ok=factor <= factor_limit,
        zero_floor_ok=zero_ok,
        factor=factor,
        factor_by_cell=tuple(factor_by_cell),
        pair_checks=tuple(pair_checks),
        floor=floor,
    )

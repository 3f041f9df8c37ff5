"""The periodic orbit as a geometric object: dense parameterization, refined
sample polyline, nearest-point queries, and the empirical distance-sandwich
certificate relating on-surface distance to distance from the fixed point.

The orbit is parameterized forward in time from the post-reset point, so
tau runs over [0, T*] with y(0) the reset image and y(T*) the fixed point;
the equivalent backward indexing is tau -> T* - tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HybridSystemDef
from .errors import ClosureError, PreconditionError, SieError
from .events import check_reset_side
from .flow import FlowSegment, IntegratorConfig, integrate
from .poincare import StabilityReport, SurfaceChart, zero_inputs

_CLOSURE_REL = 1e-8
_DS_MAX_REL = 1e-3
_TAU_TOL_REL = 1e-12
_TAU_SET_TOL = 1e-9


class UpperBoundViolation(SieError):
    """dist(x, orbit) exceeded ||x - x*||; analytically impossible, so this
    always indicates a distance-query defect."""

    def __init__(self, x, excess: float, report=None):
        self.x = x
        self.excess = excess
        self.report = report
        super().__init__(f"orbit distance exceeds fixed-point distance by {excess:.3g} at {x!r}")


@dataclass(frozen=True)
class PeriodicOrbit:
    x_star: np.ndarray
    t_star: float
    segment: FlowSegment
    taus: np.ndarray     # refined, ascending, taus[0] = 0, taus[-1] = t_star
    points: np.ndarray   # points[i] = y(taus[i])
    diameter: float
    ds_max: float

    def eval(self, tau: float) -> np.ndarray:
        return self.segment.eval(min(max(tau, 0.0), self.t_star))

    def eval_many(self, taus: np.ndarray) -> np.ndarray:
        return self.segment.eval_many(np.clip(taus, 0.0, self.t_star))

    def tau_backward(self, tau: float) -> float:
        """The reversed indexing that starts at the fixed point."""
        return self.t_star - tau

    # -- polyline machinery -------------------------------------------------

    def coarse_distances(self, x: np.ndarray) -> np.ndarray:
        """Distance from x to every chord of the sample polyline."""
        x = np.asarray(x, dtype=float)
        p = self.points[:-1]
        d = self.points[1:] - p
        w = x[None, :] - p
        denom = np.einsum("ij,ij->i", d, d)
        s = np.clip(np.einsum("ij,ij->i", w, d) / denom, 0.0, 1.0)
        proj = p + s[:, None] * d
        diff = x[None, :] - proj
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def coarse_distance(self, x: np.ndarray) -> float:
        return float(np.min(self.coarse_distances(x)))


def build_orbit(sys: HybridSystemDef, report: StabilityReport,
                cfg: IntegratorConfig | None = None,
                ds_max_rel: float = _DS_MAX_REL) -> PeriodicOrbit:
    """Integrate the zero-input flow from the reset image over one period and
    refine samples until consecutive points are closer than ds_max.

    Raises ClosureError when the flow fails to return to the fixed point,
    which indicates a stale or unconverged report.
    """
    if not report.newton_residuals:
        raise PreconditionError("build_orbit needs a converged report")
    cfg = (cfg or IntegratorConfig()).tightened(1e-12, 1e-14)
    u0, v0 = zero_inputs(sys)
    x_star = np.asarray(report.x_star, dtype=float)
    x_plus = sys.eval_delta(x_star, v0)
    check_reset_side(sys, x_plus)
    seg = integrate(sys, x_plus, u0, (0.0, report.t_star), cfg)
    closure = float(np.linalg.norm(seg.ys[-1] - x_star))
    scale = max(1.0, float(np.linalg.norm(x_star)))
    if closure > _CLOSURE_REL * scale:
        raise ClosureError(
            f"orbit endpoint misses the fixed point by {closure:.3g} "
            f"(tolerance {_CLOSURE_REL * scale:.3g}); report may be stale")

    nodes = np.concatenate([seg.ts, [report.t_star]])
    pts = seg.eval_many(nodes)
    diff = pts[:, None, :] - pts[None, :, :]
    diameter = float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))
    if diameter <= 0.0:
        raise ClosureError("orbit has zero diameter")
    ds_max = ds_max_rel * diameter

    taus = [0.0]
    points = [seg.eval(0.0)]
    stack = [(nodes[i], nodes[i + 1]) for i in range(len(nodes) - 1)][::-1]
    while stack:
        a, b = stack.pop()
        ya = seg.eval(a)
        yb = seg.eval(b)
        if float(np.linalg.norm(yb - ya)) > ds_max and (b - a) > 1e-13 * report.t_star:
            mid = 0.5 * (a + b)
            stack.append((mid, b))
            stack.append((a, mid))
        else:
            taus.append(b)
            points.append(yb)
    return PeriodicOrbit(x_star=x_star, t_star=report.t_star, segment=seg,
                         taus=np.asarray(taus), points=np.vstack(points),
                         diameter=diameter, ds_max=ds_max)


def _golden_refine(orbit: PeriodicOrbit, x: np.ndarray, lo: float, hi: float) -> tuple[float, float]:
    """Minimize ||x - y(tau)||^2 on [lo, hi]: golden section to the tau
    tolerance, then one parabolic polish step."""

    def g(tau: float) -> float:
        d = x - orbit.eval(tau)
        return float(d @ d)

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    tol = _TAU_TOL_REL * max(1.0, orbit.t_star)
    c = b - invphi * (b - a)
    d_ = a + invphi * (b - a)
    gc, gd = g(c), g(d_)
    while (b - a) > tol:
        if gc < gd:
            b, d_, gd = d_, c, gc
            c = b - invphi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d_, gd
            d_ = a + invphi * (b - a)
            gd = g(d_)
    tau = 0.5 * (a + b)
    # parabolic polish through three nearby samples
    h = max(tol, 1e-9 * max(1.0, orbit.t_star))
    t0, t1, t2 = max(lo, tau - h), tau, min(hi, tau + h)
    if t0 < t1 < t2:
        g0, g1, g2 = g(t0), g(t1), g(t2)
        denom = (t1 - t0) * (g1 - g2) - (t1 - t2) * (g1 - g0)
        if denom != 0.0:
            t_par = t1 - 0.5 * ((t1 - t0) ** 2 * (g1 - g2) - (t1 - t2) ** 2 * (g1 - g0)) / denom
            if lo <= t_par <= hi and g(t_par) < g1:
                tau = t_par
    return tau, math.sqrt(g(tau))


def _parabolic_min(ts: np.ndarray, gs: np.ndarray) -> float:
    """Vertex of the parabola through three (t, g) samples; middle t on
    degenerate input."""
    (t0, t1, t2), (g0, g1, g2) = ts, gs
    denom = (t1 - t0) * (g1 - g2) - (t1 - t2) * (g1 - g0)
    if denom == 0.0:
        return t1
    return t1 - 0.5 * ((t1 - t0) ** 2 * (g1 - g2) - (t1 - t2) ** 2 * (g1 - g0)) / denom


def refine_distance(orbit: PeriodicOrbit, x: np.ndarray, i_chord: int) -> float:
    """Cheap sharpening of the polyline distance near chord i_chord: two
    rounds of parabolic interpolation of ||x - y(tau)||^2 on the dense
    interpolant.  Always an overestimate of the true curve distance (it
    evaluates actual curve points), accurate to far below the chord sag."""
    x = np.asarray(x, dtype=float)

    def g(tau: float) -> float:
        d = x - orbit.eval(tau)
        return float(d @ d)

    lo = orbit.taus[max(i_chord - 1, 0)]
    hi = orbit.taus[min(i_chord + 2, len(orbit.taus) - 1)]
    ts = np.array([lo, 0.5 * (lo + hi), hi])
    gs = np.array([g(t) for t in ts])
    best_t = ts[int(np.argmin(gs))]
    best_g = float(np.min(gs))
    width = 0.5 * (hi - lo)
    # each round re-centers on the parabola vertex and shrinks the stencil,
    # so the cubic-term bias of a single fit dies off geometrically
    for _ in range(6):
        t_new = min(max(_parabolic_min(ts, gs), lo), hi)
        g_new = g(t_new)
        if g_new < best_g:
            best_t, best_g = t_new, g_new
        width *= 0.15
        if width < 1e-12 * max(1.0, orbit.t_star):
            break
        ts = np.array([max(lo, best_t - width), best_t, min(hi, best_t + width)])
        gs = np.array([g(ts[0]), best_g, g(ts[2])])
    return math.sqrt(best_g)


def dist_to_orbit(orbit: PeriodicOrbit, x: np.ndarray) -> tuple[float, list[float]]:
    """Distance from x to the orbit closure and the set of parameter values
    realizing it.

    The coarse polyline minimum brackets the candidates; each bracket is
    refined on the dense interpolant.  The endpoint tau = T* (the fixed
    point itself) is always a candidate, so closure points are included.
    Total: never raises.
    """
    x = np.asarray(x, dtype=float)
    chord = orbit.coarse_distances(x)
    d_min = float(np.min(chord))
    # every chord whose distance could hide the true minimum gets refined,
    # with contiguous candidate chords merged into one bracket
    cand = np.flatnonzero(chord <= d_min + orbit.ds_max)
    runs: list[tuple[int, int]] = []
    for i in cand:
        if runs and i == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], int(i))
        else:
            runs.append((int(i), int(i)))
    best: list[tuple[float, float]] = []
    for i0, i1 in runs:
        lo = orbit.taus[max(i0 - 1, 0)]
        hi = orbit.taus[min(i1 + 2, len(orbit.taus) - 1)]
        best.append(_golden_refine(orbit, x, lo, hi))
    for tau_end in (0.0, orbit.t_star):
        d_end = float(np.linalg.norm(x - orbit.eval(tau_end)))
        best.append((tau_end, d_end))
    d = min(b[1] for b in best)
    near = sorted(t for t, dv in best if dv <= d + _TAU_SET_TOL)
    tau_set: list[float] = []
    for t in near:
        if not tau_set or t - tau_set[-1] > _TAU_SET_TOL:
            tau_set.append(t)
    return d, tau_set


@dataclass(frozen=True)
class Prop1Report:
    """Empirical certificate of the two-sided distance comparison on S.

    ratio_min is the smallest observed dist(x, orbit) / ||x - x*|| over the
    sample set (the empirical stand-in for the existential contraction
    constant); the upper bound dist <= ||x - x*|| is unconditional, so any
    violation is counted as a bug signal.
    """

    ratio_min: float
    violations: int
    upper_margin: float
    n_samples: int
    radii: tuple[float, ...]
    seed: int
    per_radius_ratio_min: tuple[float, ...]


def certify_prop1(orbit: PeriodicOrbit, sys: HybridSystemDef, n_samples: int,
                  radii: tuple[float, ...] | None = None, seed: int = 0,
                  far_field: bool = True) -> Prop1Report:
    """Sample the surface around the fixed point at a schedule of radii and
    check the distance sandwich on every sample.

    Raises UpperBoundViolation (report attached) if any sample has orbit
    distance above its fixed-point distance plus 1e-9.
    """
    if n_samples < 1:
        raise PreconditionError("need at least one sample")
    if radii is None:
        radii = tuple(r * orbit.diameter for r in (1e-3, 1e-2, 1e-1, 1.0))
        if far_field:
            radii = radii + tuple(r * orbit.diameter for r in (10.0, 100.0, 1000.0))
    chart = SurfaceChart.build(sys, orbit.x_star)
    z_star = chart.project(orbit.x_star)
    rng = np.random.default_rng(seed)
    per_radius = n_samples // len(radii) + (1 if n_samples % len(radii) else 0)

    ratio_min = math.inf
    worst_margin = -math.inf
    violations = 0
    first_violation = None
    used = 0
    per_radius_min = []
    for r in radii:
        r_min = math.inf
        for _ in range(per_radius):
            if used >= n_samples:
                break
            direction = rng.normal(size=z_star.size)
            nrm = float(np.linalg.norm(direction))
            if nrm == 0.0:
                continue
            x = chart.embed(z_star + (r / nrm) * direction)
            dx = float(np.linalg.norm(x - orbit.x_star))
            used += 1
            if dx < 1e-12:
                continue  # degenerate sample, excluded from ratio statistics
            d, _ = dist_to_orbit(orbit, x)
            margin = d - dx
            worst_margin = max(worst_margin, margin)
            if margin > 1e-9:
                violations += 1
                if first_violation is None:
                    first_violation = (x, margin)
            ratio = d / dx
            ratio_min = min(ratio_min, ratio)
            r_min = min(r_min, ratio)
        per_radius_min.append(r_min)
    report = Prop1Report(ratio_min=ratio_min, violations=violations,
                         upper_margin=worst_margin, n_samples=used,
                         radii=tuple(radii), seed=seed,
                         per_radius_ratio_min=tuple(per_radius_min))
    if violations:
        x_bad, excess = first_violation
        raise UpperBoundViolation(x_bad, excess, report)
    return report

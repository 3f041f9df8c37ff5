"""Surface-crossing location and the two time-to-impact maps.

Crossings are located by sign-change bracketing on the dense output of each
accepted step (bisection, then one Newton polish using the flow derivative
of H).  Only downward crossings (H passing from positive to negative) are
events; tangential grazes are rejected loudly because the whole analysis
assumes transversality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ContinuousSignal, HybridSystemDef
from .errors import (GrazeDetected, InfiniteTimeToImpact, NoCrossing,
                     PreconditionError, ResetNotInSPlus)
from .flow import FlowSegment, IntegratorConfig, Stepper, _build_segment

_SAMPLES_PER_STEP = 12
_BISECT_REL_WIDTH = 1e-13
_GRAZE_REL = 1e-8

# on-surface membership is judged more loosely than event localization so
# states produced by a previous localization re-enter preconditions cleanly
_EVENT_TOL = 1e-10
_SURFACE_TOL = 1e-8


def event_tol(x: np.ndarray) -> float:
    return _EVENT_TOL * max(1.0, float(np.max(np.abs(x))))


def surface_tol(x: np.ndarray) -> float:
    return _SURFACE_TOL * max(1.0, float(np.max(np.abs(x))))


@dataclass(frozen=True)
class ImpactEvent:
    t_hit: float
    x_minus: np.ndarray
    lfh: float
    localization_width: float


def _graze_tol(sys: HybridSystemDef, x: np.ndarray, u_value: np.ndarray) -> float:
    fn = float(np.linalg.norm(sys.eval_f(x, u_value)))
    gn = float(np.linalg.norm(sys.surface_gradient(x)))
    return _GRAZE_REL * fn * gn


def _record_eval(record, t: float) -> np.ndarray:
    t_left, h, y_left, _y_right, Q = record
    th = (t - t_left) / h
    powers = np.array([th, th * th, th**3, th**4])
    return y_left + h * (Q @ powers)


def _refine_in_record(sys, ufn, record, ta: float, tb: float) -> tuple[float, np.ndarray, float, float]:
    """Bisect H to a relative width floor inside one dense record, then apply
    a single Newton polish with the flow derivative; returns
    (t_hit, x_minus, lfh, width)."""
    width_tol = _BISECT_REL_WIDTH * max(1.0, abs(tb))
    while (tb - ta) > width_tol:
        tm = 0.5 * (ta + tb)
        if sys.eval_h(_record_eval(record, tm)) > 0.0:
            ta = tm
        else:
            tb = tm
    t_hit = 0.5 * (ta + tb)
    x = _record_eval(record, t_hit)
    lfh = sys.lie_h(x, ufn(t_hit))
    if lfh != 0.0:
        t_polish = t_hit - sys.eval_h(x) / lfh
        lo = record[0]
        hi = record[0] + record[1]
        if lo <= t_polish <= hi:
            t_hit = t_polish
            x = _record_eval(record, t_hit)
            lfh = sys.lie_h(x, ufn(t_hit))
    return t_hit, x, lfh, tb - ta


def _scan_record(sys, ufn, record, from_t: float) -> tuple[float, np.ndarray, float, float] | None:
    """First downward sign change of H inside one step record after from_t."""
    t_left, h, _y_left, _y_right, _Q = record
    t_lo = max(t_left, from_t)
    t_hi = t_left + h
    if t_hi <= t_lo:
        return None
    ts = np.linspace(t_lo, t_hi, _SAMPLES_PER_STEP)
    hs = [sys.eval_h(_record_eval(record, t)) for t in ts]
    dwell_floor = 1e-11 * max(1.0, abs(from_t))
    for i in range(len(ts) - 1):
        if hs[i] > 0.0 and hs[i + 1] <= 0.0:
            t_hit, x, lfh, width = _refine_in_record(sys, ufn, record, ts[i], ts[i + 1])
            if t_hit <= from_t + dwell_floor:
                continue
            if abs(lfh) < _graze_tol(sys, x, ufn(t_hit)):
                raise GrazeDetected(t_hit, lfh)
            if lfh >= 0.0:
                # interpolant wiggle produced a spurious bracket
                continue
            return t_hit, x, lfh, width
    return None


def _endpoint_event(sys, ufn, t_end: float, x_end: np.ndarray):
    """A trajectory that lands on the surface exactly at the end of the span
    (within event tolerance, approaching transversally) counts as a crossing
    at the endpoint."""
    hv = sys.eval_h(x_end)
    if abs(hv) <= event_tol(x_end):
        lfh = sys.lie_h(x_end, ufn(t_end))
        if lfh < 0.0 and abs(lfh) >= _graze_tol(sys, x_end, ufn(t_end)):
            return ImpactEvent(t_hit=t_end, x_minus=np.asarray(x_end, dtype=float).copy(),
                               lfh=lfh, localization_width=0.0)
    return None


def locate_crossing(seg: FlowSegment, sys: HybridSystemDef, u: ContinuousSignal,
                    from_t: float) -> ImpactEvent:
    """First downward crossing of H strictly after from_t along a segment.

    Raises NoCrossing if H keeps its sign, GrazeDetected on tangency.
    """
    if from_t < seg.t0 - 1e-12 or from_t > seg.t1 + 1e-12:
        raise PreconditionError("from_t outside the segment span")
    ufn = u.compile()
    for i in range(len(seg.ts)):
        record = (seg.ts[i], seg.hs[i], seg.ys[i], seg.ys[i + 1], seg.qs[i])
        if seg.ts[i] + seg.hs[i] <= from_t:
            continue
        hit = _scan_record(sys, ufn, record, from_t)
        if hit is not None:
            t_hit, x, lfh, width = hit
            if t_hit > seg.t1:
                break
            return ImpactEvent(t_hit=t_hit, x_minus=x, lfh=lfh, localization_width=width)
    end = _endpoint_event(sys, ufn, seg.t1, seg.eval(seg.t1))
    if end is not None and end.t_hit > from_t:
        return end
    raise NoCrossing(f"H does not cross zero downward in ({from_t:.6g}, {seg.t1:.6g}]")


@dataclass(frozen=True)
class CrossingSearch:
    """Outcome of event-driven integration up to a crossing or a time cap."""

    segment: FlowSegment
    event: ImpactEvent | None


def first_crossing(sys: HybridSystemDef, x0: np.ndarray, u: ContinuousSignal,
                   t0: float, t_end: float, cfg: IntegratorConfig) -> CrossingSearch:
    """Integrate from (t0, x0) stopping at the first downward crossing of H.

    The returned segment is trimmed to end at the crossing time with the
    localized pre-impact state as its final node; when no crossing occurs the
    segment covers [t0, t_end] and event is None.
    """
    stepper = Stepper(sys, x0, u, t0, t_end, cfg)
    ufn = u.compile()
    while not stepper.done:
        record = stepper.step()
        hit = _scan_record(sys, ufn, record, t0 if stepper.n_accepted == 1 else record[0])
        if hit is not None:
            t_hit, x, lfh, width = hit
            event = ImpactEvent(t_hit=t_hit, x_minus=x, lfh=lfh, localization_width=width)
            seg = _build_segment(stepper.records, t0, t_hit, stepper.n_accepted,
                                 stepper.n_rejected, stepper.h_min, stepper.h_max,
                                 final_y=x)
            return CrossingSearch(segment=seg, event=event)
    seg = _build_segment(stepper.records, t0, t_end, stepper.n_accepted,
                         stepper.n_rejected, stepper.h_min, stepper.h_max)
    event = _endpoint_event(sys, ufn, t_end, seg.ys[-1])
    return CrossingSearch(segment=seg, event=event)


@dataclass(frozen=True)
class TimeToImpact:
    """Result of a time-to-impact query; time is math.inf when the flow never
    returned to the surface before the cap (the truncated 'otherwise' branch)."""

    time: float
    state: np.ndarray | None
    segment: FlowSegment

    @property
    def finite(self) -> bool:
        return math.isfinite(self.time)


def check_reset_side(sys: HybridSystemDef, x_plus: np.ndarray) -> float:
    """Validate which side of the surface a reset landed on; returns H(x+).

    Ordinary systems must land strictly above the surface.  Systems declaring
    surface_reset_ok may land on it (identity adapters, restitution maps) but
    never strictly below.
    """
    h_plus = sys.eval_h(x_plus)
    tol = surface_tol(x_plus)
    if sys.surface_reset_ok:
        if h_plus < -tol:
            raise ResetNotInSPlus(h_plus)
    elif h_plus <= tol:
        raise ResetNotInSPlus(h_plus)
    return h_plus


def time_to_impact(sys: HybridSystemDef, x: np.ndarray, u: ContinuousSignal,
                   v: np.ndarray, cfg: IntegratorConfig | None = None,
                   t_cap: float = 100.0) -> TimeToImpact:
    """Duration until the reset-initialized flow next reaches the surface,
    together with the pre-impact state there.

    x must lie on the surface; the reset Delta(x, v) is applied first and the
    forced flow from it is followed until a downward crossing or t_cap.
    """
    x = np.asarray(x, dtype=float)
    if abs(sys.eval_h(x)) > surface_tol(x):
        raise PreconditionError(f"state is not on the surface: H={sys.eval_h(x):.3g}")
    cfg = cfg or IntegratorConfig()
    x_plus = sys.eval_delta(x, np.asarray(v, dtype=float))
    check_reset_side(sys, x_plus)
    search = first_crossing(sys, x_plus, u, 0.0, t_cap, cfg)
    if search.event is None:
        return TimeToImpact(time=math.inf, state=None, segment=search.segment)
    return TimeToImpact(time=search.event.t_hit, state=search.event.x_minus,
                        segment=search.segment)


def time_to_impact_from_splus(sys: HybridSystemDef, x: np.ndarray, u: ContinuousSignal,
                              cfg: IntegratorConfig | None = None,
                              t_cap: float = 100.0) -> TimeToImpact:
    """Time-to-impact for a free flow started strictly above the surface
    (no reset applied); the returned state is the pre-impact limit."""
    x = np.asarray(x, dtype=float)
    if sys.eval_h(x) <= surface_tol(x):
        raise PreconditionError("state must be strictly above the surface")
    cfg = cfg or IntegratorConfig()
    search = first_crossing(sys, x, u, 0.0, t_cap, cfg)
    if search.event is None:
        return TimeToImpact(time=math.inf, state=None, segment=search.segment)
    return TimeToImpact(time=search.event.t_hit, state=search.event.x_minus,
                        segment=search.segment)


def require_finite(result: TimeToImpact, t_cap: float) -> TimeToImpact:
    if not result.finite:
        raise InfiniteTimeToImpact(t_cap)
    return result

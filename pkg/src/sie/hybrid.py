"""Full hybrid execution: flow-reset alternation with right-continuous
solution storage and runtime guards against Zeno and beating behavior.

The stored value at an impact instant is always the post-reset state; the
pre-impact state survives as the left limit in the impact log, which is also
what the discrete section iteration consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContinuousSignal, DiscreteSequence, HybridSystemDef
from .errors import (Blowup, EvaluatorFailure, GrazeDetected, NoImpacts,
                     PreconditionError, ResetNotInSPlus, SieError,
                     StepLimitExceeded)
from .events import check_reset_side, first_crossing, surface_tol
from .flow import FlowSegment, IntegratorConfig


@dataclass(frozen=True)
class GuardConfig:
    """Runtime guards; on by default so parameter sweeps can tally
    terminations instead of crashing."""

    k_max: int = 10_000
    min_dwell: float | None = None  # auto: 1e-6 * t_star if known, else 1e-9 * t_final
    t_star: float | None = None

    def dwell_floor(self, t_final: float) -> float:
        if self.min_dwell is not None:
            return self.min_dwell
        if self.t_star is not None:
            return 1e-6 * self.t_star
        return 1e-9 * t_final


@dataclass(frozen=True)
class Impact:
    k: int
    t: float
    x_minus: np.ndarray
    v: np.ndarray
    x_plus: np.ndarray


@dataclass(frozen=True)
class HybridTrajectory:
    segments: tuple[FlowSegment, ...]
    impacts: tuple[Impact, ...]
    t_final: float
    termination: str  # horizon-reached | zeno-guard | beating-guard | escape | error
    error: str | None = None

    def eval(self, t: float) -> np.ndarray:
        if not self.segments:
            raise PreconditionError("trajectory holds no flow segments")
        if t < self.segments[0].t0 or t > self.t_final + 1e-12 * max(1.0, abs(self.t_final)):
            raise PreconditionError(f"t={t!r} outside trajectory span")
        starts = [s.t0 for s in self.segments]
        i = int(np.searchsorted(starts, t, side="right")) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        seg = self.segments[i]
        return seg.eval(min(t, seg.t1))

    @property
    def final_state(self) -> np.ndarray:
        if self.impacts and (not self.segments or self.impacts[-1].t >= self.segments[-1].t1):
            return self.impacts[-1].x_plus
        return self.segments[-1].ys[-1]

    def impact_times(self) -> np.ndarray:
        return np.array([imp.t for imp in self.impacts])

    def impact_intervals(self) -> np.ndarray:
        return np.diff(self.impact_times())


def simulate(sys: HybridSystemDef, x0: np.ndarray, u: ContinuousSignal,
             vbar: DiscreteSequence, t_final: float,
             guards: GuardConfig | None = None,
             cfg: IntegratorConfig | None = None) -> HybridTrajectory:
    """Hybrid solution over [0, t_final] unless a guard fires.

    The initial state must lie above the surface, or on it, in which case the
    reset applies immediately and consumes the first discrete input.  Inputs
    are evaluated on the global clock (each inter-impact piece sees u
    restricted to its window, not restarted).  Guard firings and structured
    numerical failures terminate the trajectory with a labelled termination
    instead of raising.
    """
    if t_final <= 0:
        raise PreconditionError("t_final must be positive")
    guards = guards or GuardConfig()
    cfg = cfg or IntegratorConfig()
    x = np.asarray(x0, dtype=float)
    v_index = 0
    t = 0.0
    segments: list[FlowSegment] = []
    impacts: list[Impact] = []
    min_dwell = guards.dwell_floor(t_final)

    h0 = sys.eval_h(x)
    if h0 < -surface_tol(x):
        raise PreconditionError(f"initial state lies below the surface (H={h0:.3g})")

    def _terminate(kind: str, err: str | None = None) -> HybridTrajectory:
        return HybridTrajectory(segments=tuple(segments), impacts=tuple(impacts),
                                t_final=t, termination=kind, error=err)

    try:
        if abs(h0) <= surface_tol(x):
            v0 = vbar[v_index]
            x_plus = sys.eval_delta(x, v0)
            check_reset_side(sys, x_plus)
            impacts.append(Impact(k=0, t=0.0, x_minus=x.copy(), v=np.asarray(v0, float), x_plus=x_plus))
            v_index += 1
            x = x_plus

        while t < t_final:
            search = first_crossing(sys, x, u, t, t_final, cfg)
            segments.append(search.segment)
            if search.event is None:
                t = t_final
                return _terminate("horizon-reached")
            ev = search.event
            dwell = ev.t_hit - t
            v_k = vbar[v_index]
            x_plus = sys.eval_delta(ev.x_minus, v_k)
            try:
                check_reset_side(sys, x_plus)
            except ResetNotInSPlus as exc:
                t = ev.t_hit
                impacts.append(Impact(k=v_index, t=t, x_minus=ev.x_minus,
                                      v=np.asarray(v_k, float), x_plus=x_plus))
                return _terminate("beating-guard", str(exc))
            impacts.append(Impact(k=v_index, t=ev.t_hit, x_minus=ev.x_minus,
                                  v=np.asarray(v_k, float), x_plus=x_plus))
            v_index += 1
            t = ev.t_hit
            x = x_plus
            if dwell < min_dwell:
                return _terminate("zeno-guard", f"inter-impact interval {dwell:.3g} below {min_dwell:.3g}")
            if len(impacts) > guards.k_max:
                return _terminate("zeno-guard", f"impact count exceeded {guards.k_max}")
        return _terminate("horizon-reached")
    except Blowup as exc:
        if exc.segment is not None:
            segments.append(exc.segment)
            t = exc.segment.t1
        return _terminate("escape", str(exc))
    except GrazeDetected as exc:
        # at the bottom of an impact accumulation the crossing velocity
        # collapses, so the graze detector trips just before the dwell guard;
        # inside an established cascade that is the Zeno phenomenon itself
        intervals = np.diff([imp.t for imp in impacts])
        if len(intervals) >= 3 and intervals[-1] < 1e3 * min_dwell:
            return _terminate("zeno-guard", str(exc))
        return _terminate("error", str(exc))
    except (EvaluatorFailure, StepLimitExceeded) as exc:
        return _terminate("error", str(exc))
    except SieError as exc:
        return _terminate("error", str(exc))


def poincare_sequence(traj: HybridTrajectory) -> list[tuple[int, np.ndarray]]:
    """The discrete iterates (k, x_k): pre-impact states, i.e. the left
    limits the right-continuous solution never attains."""
    if not traj.impacts:
        raise NoImpacts("trajectory has no impacts")
    return [(imp.k, imp.x_minus) for imp in traj.impacts]

"""Continuous-phase solver.

An embedded Dormand-Prince 5(4) pair with the free 4th-order dense
interpolant.  Dense output is kept for every accepted step because event
location and orbit distance queries both evaluate the flow between nodes.
Time-varying inputs are handled by evaluating u(t) at the stage times, i.e.
the solver integrates the frozen-signal vector field (t, x) -> f(x, u(t)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ContinuousSignal, HybridSystemDef
from .errors import Blowup, PreconditionError, StepLimitExceeded

# Dormand-Prince 5(4) tableau with the Shampine dense-output matrix.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([], dtype=float),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERR_EXPONENT = -0.2  # -1/(error order + 1)


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: float = math.inf
    max_steps: int = 1_000_000
    blowup: float = 1e8

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise PreconditionError("rtol and atol must be positive")
        if self.max_step <= 0:
            raise PreconditionError("max_step must be positive")

    def tightened(self, rtol: float, atol: float) -> "IntegratorConfig":
        return IntegratorConfig(rtol=min(self.rtol, rtol), atol=min(self.atol, atol),
                                max_step=self.max_step, max_steps=self.max_steps,
                                blowup=self.blowup)


@dataclass(frozen=True)
class FlowSegment:
    """Dense solution of one continuous phase over [t0, t1].

    ts holds the left edge of each accepted step, hs the step sizes used to
    scale the interpolant, ys the node states (one more row than steps) and
    qs the per-step dense coefficient matrices.  The last node may sit inside
    the final step's interpolation range when the segment was trimmed at an
    event time.
    """

    t0: float
    t1: float
    ts: np.ndarray
    hs: np.ndarray
    ys: np.ndarray
    qs: np.ndarray
    n_accepted: int
    n_rejected: int
    h_min: float
    h_max: float

    @property
    def n(self) -> int:
        return self.ys.shape[1]

    def _locate(self, t: float) -> int:
        i = int(np.searchsorted(self.ts, t, side="right")) - 1
        return min(max(i, 0), len(self.ts) - 1)

    def eval(self, t: float) -> np.ndarray:
        if t < self.t0 - 1e-12 * max(1.0, abs(self.t0)) or t > self.t1 + 1e-12 * max(1.0, abs(self.t1)):
            raise PreconditionError(f"t={t!r} outside segment [{self.t0!r}, {self.t1!r}]")
        if t <= self.t0:
            return self.ys[0].copy()
        if t >= self.t1:
            return self.ys[-1].copy()
        i = self._locate(t)
        th = (t - self.ts[i]) / self.hs[i]
        if th == 0.0:
            return self.ys[i].copy()
        powers = np.array([th, th * th, th**3, th**4])
        return self.ys[i] + self.hs[i] * (self.qs[i] @ powers)

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.empty((len(ts), self.n))
        idx = np.clip(np.searchsorted(self.ts, ts, side="right") - 1, 0, len(self.ts) - 1)
        th = (ts - self.ts[idx]) / self.hs[idx]
        powers = np.stack([th, th**2, th**3, th**4], axis=1)
        for row, (i, p) in enumerate(zip(idx, powers)):
            out[row] = self.ys[i] + self.hs[i] * (self.qs[i] @ p)
        out[ts <= self.t0] = self.ys[0]
        out[ts >= self.t1] = self.ys[-1]
        return out


class Stepper:
    """Adaptive Dormand-Prince stepper producing one dense record per
    accepted step; driven directly by event location so integration can stop
    at a surface crossing without overshooting the step budget."""

    def __init__(self, sys: HybridSystemDef, x0: np.ndarray, u: ContinuousSignal,
                 t0: float, t_end: float, cfg: IntegratorConfig):
        if t_end <= t0:
            raise PreconditionError("integration span must have positive length")
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (sys.n,) or not np.all(np.isfinite(x0)):
            raise PreconditionError("initial state must be finite with the system dimension")
        self.sys = sys
        self.cfg = cfg
        self.t = float(t0)
        self.t_end = float(t_end)
        self.y = x0.copy()
        ufn = u.compile()
        self._rhs = lambda t, y: sys.eval_f(y, ufn(t))
        self._k1 = self._rhs(self.t, self.y)
        self._h = self._initial_step()
        self._nfev = 2  # initial-step heuristic reuses k1 and one probe
        self.n_accepted = 0
        self.n_rejected = 0
        self.h_min = math.inf
        self.h_max = 0.0
        self.records: list[tuple[float, float, np.ndarray, np.ndarray, np.ndarray]] = []

    @property
    def done(self) -> bool:
        return self.t >= self.t_end

    def _initial_step(self) -> float:
        scale = self.cfg.atol + self.cfg.rtol * np.abs(self.y)
        d0 = np.linalg.norm(self.y / scale) / math.sqrt(self.y.size)
        d1 = np.linalg.norm(self._k1 / scale) / math.sqrt(self.y.size)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        y1 = self.y + h0 * self._k1
        f1 = self._rhs(self.t + h0, y1)
        d2 = np.linalg.norm((f1 - self._k1) / scale) / math.sqrt(self.y.size) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        return min(100 * h0, h1, self.t_end - self.t, self.cfg.max_step)

    def _partial_segment(self) -> FlowSegment:
        return _build_segment(self.records, self.t0_of_records(), self.t,
                              self.n_accepted, self.n_rejected, self.h_min, self.h_max)

    def t0_of_records(self) -> float:
        return self.records[0][0] if self.records else self.t

    def step(self) -> tuple[float, float, np.ndarray, np.ndarray, np.ndarray]:
        """Advance one accepted step; returns (t_left, h, y_left, y_right, Q)."""
        if self.done:
            raise PreconditionError("stepper already reached the end of its span")
        n_sqrt = math.sqrt(self.y.size)
        while True:
            if self.n_accepted + self.n_rejected >= self.cfg.max_steps:
                raise StepLimitExceeded(self.cfg.max_steps, self.t)
            h = min(self._h, self.cfg.max_step, self.t_end - self.t)
            tiny = 10.0 * abs(np.nextafter(self.t, math.inf) - self.t)
            if h < tiny:
                h = tiny
            K = np.empty((7, self.y.size))
            K[0] = self._k1
            for i in range(1, 6):
                yi = self.y + h * (_A[i] @ K[:i])
                K[i] = self._rhs(self.t + _C[i] * h, yi)
            y_new = self.y + h * (_A[6] @ K[:6])
            K[6] = self._rhs(self.t + h, y_new)
            self._nfev += 6
            scale = self.cfg.atol + self.cfg.rtol * np.maximum(np.abs(self.y), np.abs(y_new))
            err = np.linalg.norm((h * (_E @ K)) / scale) / n_sqrt
            if err <= 1.0:
                t_left = self.t
                Q = K.T @ _P
                # snap to the span end when within rounding of it; the record
                # keeps the true step size used to scale the interpolant
                self.t = self.t_end if (self.t + h) >= self.t_end - tiny else self.t + h
                record = (t_left, h, self.y.copy(), y_new, Q)
                self.records.append(record)
                self.y = y_new
                self._k1 = K[6]
                self.n_accepted += 1
                self.h_min = min(self.h_min, h)
                self.h_max = max(self.h_max, h)
                factor = _MAX_FACTOR if err == 0.0 else min(_MAX_FACTOR, _SAFETY * err**_ERR_EXPONENT)
                self._h = h * factor
                if not np.all(np.abs(y_new) <= self.cfg.blowup):
                    raise Blowup(self.t, float(np.max(np.abs(y_new))), self._partial_segment())
                return record
            self.n_rejected += 1
            self._h = h * max(_MIN_FACTOR, _SAFETY * err**_ERR_EXPONENT)


def _build_segment(records, t0: float, t1: float, n_acc: int, n_rej: int,
                   h_min: float, h_max: float, final_y: np.ndarray | None = None) -> FlowSegment:
    if not records:
        raise PreconditionError("cannot build a segment from zero accepted steps")
    ts = np.array([r[0] for r in records])
    hs = np.array([r[1] for r in records])
    ys = np.vstack([np.array([r[2] for r in records]), records[-1][3][None, :]])
    qs = np.stack([r[4] for r in records])
    if final_y is not None:
        ys[-1] = final_y
    return FlowSegment(t0=t0, t1=t1, ts=ts, hs=hs, ys=ys, qs=qs,
                       n_accepted=n_acc, n_rejected=n_rej,
                       h_min=h_min if n_acc else 0.0, h_max=h_max)


def integrate(sys: HybridSystemDef, x0: np.ndarray, u: ContinuousSignal,
              t_span: tuple[float, float], cfg: IntegratorConfig | None = None) -> FlowSegment:
    """Dense forced flow of the continuous phase over t_span.

    Raises StepLimitExceeded, Blowup (carrying the partial segment) or
    EvaluatorFailure; otherwise the returned segment covers the whole span
    and reproduces its stored endpoints exactly.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    stepper = Stepper(sys, x0, u, t0, t1, cfg)
    while not stepper.done:
        stepper.step()
    return _build_segment(stepper.records, t0, t1, stepper.n_accepted,
                          stepper.n_rejected, stepper.h_min, stepper.h_max)


@dataclass(frozen=True)
class Sensitivity:
    derivative: np.ndarray
    richardson_error: float


def flow_sensitivity(sys: HybridSystemDef, x0: np.ndarray, u: ContinuousSignal,
                     T: float, cfg: IntegratorConfig | None = None,
                     direction: np.ndarray | None = None) -> Sensitivity:
    """Central-difference directional derivative of x -> flow(T, x, u).

    Uses step h = eps^(1/3) * max(1, ||x0||) and attaches a Richardson
    step-pair consistency estimate from the half-step evaluation.  For T = 0
    the flow is the identity and the direction is returned exactly.
    """
    if direction is None:
        raise PreconditionError("direction is required")
    d = np.asarray(direction, dtype=float)
    nd = float(np.linalg.norm(d))
    if not math.isclose(nd, 1.0, rel_tol=1e-9):
        raise PreconditionError("direction must be a unit vector")
    x0 = np.asarray(x0, dtype=float)
    if T == 0.0:
        return Sensitivity(derivative=d.copy(), richardson_error=0.0)
    cfg = cfg or IntegratorConfig()
    h = float(np.finfo(float).eps ** (1.0 / 3.0)) * max(1.0, float(np.linalg.norm(x0)))

    def probe(step: float) -> np.ndarray:
        fp = integrate(sys, x0 + step * d, u, (0.0, T), cfg).ys[-1]
        fm = integrate(sys, x0 - step * d, u, (0.0, T), cfg).ys[-1]
        return (fp - fm) / (2.0 * step)

    d_h = probe(h)
    d_h2 = probe(h / 2.0)
    # central differences are O(h^2): the pair difference estimates the
    # remaining error of the half-step value up to a factor 3
    rich = float(np.linalg.norm(d_h - d_h2)) / 3.0
    return Sensitivity(derivative=d_h2, richardson_error=rich)

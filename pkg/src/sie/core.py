"""Domain types shared by every module: the system triple (f, delta, H),
continuous and discrete input signals with sup-norm queries, and point-to-set
distance helpers.

All types are immutable after construction and safe to share between threads.
The Euclidean norm is used throughout; per-space norms are never mixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _rng
from .errors import EvaluatorFailure, PreconditionError


def euclidean(x: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float)))


def point_set_distance(x: np.ndarray, samples: np.ndarray) -> float:
    """min over rows y of samples of ||x - y||.

    An upper bound on the distance to any set the rows are drawn from, and
    1-Lipschitz in x for a fixed sample matrix.
    """
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    d = pts - np.asarray(x, dtype=float)[None, :]
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d))))


# ---------------------------------------------------------------------------
# system definition


@dataclass(frozen=True)
class HybridSystemDef:
    """The triple (f, delta, H) with dimensions (n, p, q).

    f(x, u_value) is the vector field, delta(x, v_value) the reset applied on
    the switching surface S = {H(x) = 0}, and grad_h an optional analytic
    gradient of H (central differences otherwise).  Evaluators must be total:
    exceptions and non-finite outputs surface as EvaluatorFailure, never as
    silent NaN propagation.

    surface_reset_ok marks models whose reset intentionally lands on S itself
    (identity-reset adapters for continuous limit cycles, restitution maps of
    the bouncing-ball kind).  For ordinary systems the reset must land
    strictly above the surface and the default (False) keeps that contract.
    """

    n: int
    p: int
    q: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    delta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], float]
    grad_h: Callable[[np.ndarray], np.ndarray] | None = None
    surface_reset_ok: bool = False
    name: str = ""

    def eval_f(self, x: np.ndarray, u_value: np.ndarray) -> np.ndarray:
        try:
            out = np.asarray(self.f(x, u_value), dtype=float)
        except Exception as exc:  # noqa: BLE001 - converted to structured failure
            raise EvaluatorFailure("f", x, str(exc)) from exc
        if out.shape != (self.n,) or not np.all(np.isfinite(out)):
            raise EvaluatorFailure("f", x, f"returned {out!r}")
        return out

    def eval_delta(self, x: np.ndarray, v_value: np.ndarray) -> np.ndarray:
        try:
            out = np.asarray(self.delta(x, v_value), dtype=float)
        except Exception as exc:  # noqa: BLE001
            raise EvaluatorFailure("delta", x, str(exc)) from exc
        if out.shape != (self.n,) or not np.all(np.isfinite(out)):
            raise EvaluatorFailure("delta", x, f"returned {out!r}")
        return out

    def eval_h(self, x: np.ndarray) -> float:
        try:
            out = float(self.h(x))
        except Exception as exc:  # noqa: BLE001
            raise EvaluatorFailure("h", x, str(exc)) from exc
        if not math.isfinite(out):
            raise EvaluatorFailure("h", x, f"returned {out!r}")
        return out

    def surface_gradient(self, x: np.ndarray) -> np.ndarray:
        """Analytic gradient of H when provided, else central differences
        with step 1e-6 * max(1, |x_i|) per component (H is smooth, so the
        O(step^2) error sits near 1e-12 times the local curvature)."""
        if self.grad_h is not None:
            try:
                g = np.asarray(self.grad_h(x), dtype=float)
            except Exception as exc:  # noqa: BLE001
                raise EvaluatorFailure("grad_h", x, str(exc)) from exc
            if g.shape != (self.n,) or not np.all(np.isfinite(g)):
                raise EvaluatorFailure("grad_h", x, f"returned {g!r}")
            return g
        return self._fd_gradient(x)

    def _fd_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.empty(self.n)
        for i in range(self.n):
            step = 1e-6 * max(1.0, abs(x[i]))
            xp = x.copy()
            xm = x.copy()
            xp[i] += step
            xm[i] -= step
            g[i] = (self.eval_h(xp) - self.eval_h(xm)) / (2.0 * step)
        return g

    def lie_h(self, x: np.ndarray, u_value: np.ndarray) -> float:
        """Directional derivative of H along the flow: grad H(x) . f(x, u)."""
        return float(np.dot(self.surface_gradient(x), self.eval_f(x, u_value)))


# ---------------------------------------------------------------------------
# continuous-time inputs


@dataclass(frozen=True)
class ContinuousSignal:
    """A continuous input on [0, inf) with a finite, queryable sup-norm bound.

    Kinds: zero, constant, sinusoid, tabulated (linear interpolation, held
    constant beyond the last sample) and composite (sum).  `scaled` multiplies
    amplitudes, preserving shape; `shifted` advances the time origin, so
    shifted(dt)(t) == original(dt + t).
    """

    dim: int
    kind: str
    value: tuple[float, ...] = ()
    amplitude: tuple[float, ...] = ()
    omega: float = 0.0
    phase: float = 0.0
    times: tuple[float, ...] = ()
    values: tuple[tuple[float, ...], ...] = ()
    parts: tuple["ContinuousSignal", ...] = ()
    scale: float = 1.0
    t_shift: float = 0.0

    @staticmethod
    def zero(dim: int) -> "ContinuousSignal":
        return ContinuousSignal(dim=dim, kind="zero")

    @staticmethod
    def constant(value: Sequence[float]) -> "ContinuousSignal":
        v = tuple(float(a) for a in value)
        return ContinuousSignal(dim=len(v), kind="constant", value=v)

    @staticmethod
    def sinusoid(amplitude: Sequence[float], omega: float, phase: float = 0.0) -> "ContinuousSignal":
        a = tuple(float(x) for x in amplitude)
        return ContinuousSignal(dim=len(a), kind="sinusoid", amplitude=a,
                                omega=float(omega), phase=float(phase))

    @staticmethod
    def tabulated(times: Sequence[float], values) -> "ContinuousSignal":
        ts = tuple(float(t) for t in times)
        vals = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(values, dtype=float)))
        if len(ts) != len(vals) or len(ts) < 2:
            raise PreconditionError("tabulated signal needs matching times/values with >= 2 samples")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise PreconditionError("tabulated sample times must be strictly increasing")
        return ContinuousSignal(dim=len(vals[0]), kind="tabulated", times=ts, values=vals)

    @staticmethod
    def composite(parts: Sequence["ContinuousSignal"]) -> "ContinuousSignal":
        parts = tuple(parts)
        if not parts:
            raise PreconditionError("composite signal needs at least one part")
        if len({p.dim for p in parts}) != 1:
            raise PreconditionError("composite parts must share a dimension")
        return ContinuousSignal(dim=parts[0].dim, kind="composite", parts=parts)

    def scaled(self, factor: float) -> "ContinuousSignal":
        return replace(self, scale=self.scale * float(factor))

    def shifted(self, dt: float) -> "ContinuousSignal":
        return replace(self, t_shift=self.t_shift + float(dt))

    def __call__(self, t: float) -> np.ndarray:
        return self.compile()(t)

    def compile(self) -> Callable[[float], np.ndarray]:
        """A plain closure evaluating the signal; used in integrator hot loops."""
        s = self.scale
        t0 = self.t_shift
        if self.kind == "zero" or s == 0.0:
            z = np.zeros(self.dim)
            return lambda t: z
        if self.kind == "constant":
            v = s * np.asarray(self.value)
            return lambda t: v
        if self.kind == "sinusoid":
            a = s * np.asarray(self.amplitude)
            w, ph = self.omega, self.phase
            return lambda t: a * math.sin(w * (t + t0) + ph)
        if self.kind == "tabulated":
            ts = np.asarray(self.times)
            vals = s * np.asarray(self.values)

            def _tab(t: float) -> np.ndarray:
                tt = min(max(t + t0, ts[0]), ts[-1])
                i = int(np.searchsorted(ts, tt, side="right")) - 1
                i = min(max(i, 0), len(ts) - 2)
                w = (tt - ts[i]) / (ts[i + 1] - ts[i])
                return (1.0 - w) * vals[i] + w * vals[i + 1]

            return _tab
        if self.kind == "composite":
            fns = [replace(p, scale=p.scale * s, t_shift=p.t_shift + t0).compile() for p in self.parts]
            return lambda t: sum(fn(t) for fn in fns)
        raise PreconditionError(f"unknown signal kind {self.kind!r}")

    def sup_norm(self) -> float:
        """A finite upper bound on sup_t ||u(t)||; exact for zero, constant
        and sinusoid, max-sample bound for tabulated."""
        s = abs(self.scale)
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return s * euclidean(np.asarray(self.value))
        if self.kind == "sinusoid":
            return s * euclidean(np.asarray(self.amplitude))
        if self.kind == "tabulated":
            return s * float(np.max(np.linalg.norm(np.asarray(self.values), axis=1)))
        if self.kind == "composite":
            return s * sum(p.sup_norm() for p in self.parts)
        raise PreconditionError(f"unknown signal kind {self.kind!r}")


# ---------------------------------------------------------------------------
# discrete-time inputs


@dataclass(frozen=True)
class DiscreteSequence:
    """A sequence k -> v_k in R^q with a finite sup-norm.

    iid-uniform draws each component of v_k uniformly from [-bound_i, bound_i]
    using the pinned splitmix64 counter generator, so a fixed seed replays
    bit-identically on every platform and any element is O(1) to access.
    """

    dim: int
    kind: str
    value: tuple[float, ...] = ()
    bound: tuple[float, ...] = ()
    seed: int = 0
    entries: tuple[tuple[float, ...], ...] = ()
    scale: float = 1.0

    @staticmethod
    def zero(dim: int) -> "DiscreteSequence":
        return DiscreteSequence(dim=dim, kind="zero")

    @staticmethod
    def constant(value: Sequence[float]) -> "DiscreteSequence":
        v = tuple(float(a) for a in value)
        return DiscreteSequence(dim=len(v), kind="constant", value=v)

    @staticmethod
    def iid_uniform(bound, seed: int, dim: int | None = None) -> "DiscreteSequence":
        if np.isscalar(bound):
            if dim is None:
                dim = 1
            b = tuple(float(bound) for _ in range(dim))
        else:
            b = tuple(float(x) for x in bound)
        if any(x < 0 for x in b):
            raise PreconditionError("iid-uniform bounds must be nonnegative")
        return DiscreteSequence(dim=len(b), kind="iid-uniform", bound=b, seed=int(seed))

    @staticmethod
    def explicit(entries) -> "DiscreteSequence":
        rows = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(entries, dtype=float)))
        return DiscreteSequence(dim=len(rows[0]), kind="explicit", entries=rows)

    def scaled(self, factor: float) -> "DiscreteSequence":
        return replace(self, scale=self.scale * float(factor))

    def __getitem__(self, k: int) -> np.ndarray:
        if k < 0:
            raise PreconditionError("sequence index must be nonnegative")
        s = self.scale
        if self.kind == "zero":
            return np.zeros(self.dim)
        if self.kind == "constant":
            return s * np.asarray(self.value)
        if self.kind == "iid-uniform":
            out = np.empty(self.dim)
            for i, b in enumerate(self.bound):
                u = _rng.uniform01(self.seed, k * self.dim + i)
                out[i] = b * (2.0 * u - 1.0)
            return s * out
        if self.kind == "explicit":
            # held at the last entry beyond the provided range
            row = self.entries[min(k, len(self.entries) - 1)]
            return s * np.asarray(row)
        raise PreconditionError(f"unknown sequence kind {self.kind!r}")

    def sup_norm(self) -> float:
        s = abs(self.scale)
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return s * euclidean(np.asarray(self.value))
        if self.kind == "iid-uniform":
            return s * euclidean(np.asarray(self.bound))
        if self.kind == "explicit":
            return s * float(np.max(np.linalg.norm(np.asarray(self.entries), axis=1)))
        raise PreconditionError(f"unknown sequence kind {self.kind!r}")


# ---------------------------------------------------------------------------
# model validation


@dataclass(frozen=True)
class ProbeResult:
    index: int
    f_finite: bool
    delta_finite: bool
    h_finite: bool
    grad_mismatch: float
    on_surface: bool
    degenerate_gradient: bool


@dataclass(frozen=True)
class ValidationReport:
    probes: tuple[ProbeResult, ...] = field(default=())

    @property
    def max_grad_mismatch(self) -> float:
        return max((p.grad_mismatch for p in self.probes), default=0.0)

    @property
    def degenerate_gradient_flagged(self) -> bool:
        return any(p.degenerate_gradient for p in self.probes)

    @property
    def all_finite(self) -> bool:
        return all(p.f_finite and p.delta_finite and p.h_finite for p in self.probes)


def validate_system(sys: HybridSystemDef, probe_states: Sequence[np.ndarray],
                    *, surface_tol: float = 1e-8) -> ValidationReport:
    """Spot-check a system definition at the given probe states.

    Per probe: evaluators return finite values, the analytic gradient (when
    provided) matches central differences to 1e-5 relative, and gradients that
    vanish on the surface (below 1e-12, breaking the codimension-1 structure)
    are flagged.  Evaluator exceptions propagate as EvaluatorFailure with the
    probe index attached.
    """
    probes = [np.asarray(p, dtype=float) for p in probe_states]
    if not probes:
        raise PreconditionError("validate_system needs at least one probe state")
    if any(not np.all(np.isfinite(p)) for p in probes):
        raise PreconditionError("probe states must be finite")

    results = []
    for idx, x in enumerate(probes):
        try:
            fv = sys.eval_f(x, np.zeros(sys.p))
            dv = sys.eval_delta(x, np.zeros(sys.q))
            hv = sys.eval_h(x)
            grad = sys.surface_gradient(x)
        except EvaluatorFailure as exc:
            exc.detail = f"probe {idx}: {exc.detail}"
            raise
        mismatch = 0.0
        if sys.grad_h is not None:
            fd = sys._fd_gradient(x)
            mismatch = euclidean(grad - fd) / max(1.0, euclidean(fd))
        on_surface = abs(hv) <= surface_tol * max(1.0, float(np.max(np.abs(x))))
        degenerate = on_surface and euclidean(grad) < 1e-12
        results.append(ProbeResult(
            index=idx,
            f_finite=bool(np.all(np.isfinite(fv))),
            delta_finite=bool(np.all(np.isfinite(dv))),
            h_finite=math.isfinite(hv),
            grad_mismatch=mismatch,
            on_surface=on_surface,
            degenerate_gradient=degenerate,
        ))
    return ValidationReport(probes=tuple(results))


def signal_sup_norm(u: ContinuousSignal) -> float:
    """Module-level alias for ContinuousSignal.sup_norm."""
    return u.sup_norm()

"""Domain types shared by the solvers, estimators and harness.

States are plain 1-D float arrays; :func:`as_state` is the validating
constructor. History segments and trajectories are immutable sampled
functions with cubic Hermite interpolation.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

DEFAULT_SEGMENT_SAMPLES = 33


class DomainError(ValueError):
    """A query fell outside the domain of a segment or trajectory."""


def as_state(x, d: Optional[int] = None) -> np.ndarray:
    """Validate and return ``x`` as a read-only 1-D float array."""
    arr = np.array(x, dtype=float, ndmin=1)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"state must be a non-empty 1-D vector, got shape {arr.shape}")
    if d is not None and arr.size != d:
        raise ValueError(f"state has dimension {arr.size}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state components must be finite")
    arr.setflags(write=False)
    return arr


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def hermite(tq, t0, t1, y0, y1, m0, m1):
    """Cubic Hermite interpolation on [t0, t1], vectorised over queries.

    ``tq, t0, t1`` have shape (n,), values and slopes shape (n, d).
    Returns (values, derivatives), each (n, d).
    """
    h = (t1 - t0)[:, None]
    s = (tq - t0)[:, None] / h
    s2 = s * s
    s3 = s2 * s
    val = ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * m0
           + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * m1)
    der = ((6 * s2 - 6 * s) * (y0 - y1) / h + (3 * s2 - 4 * s + 1) * m0
           + (3 * s2 - 2 * s) * m1)
    return val, der


def _piecewise_eval(nodes, values, slopes, tq):
    """Evaluate a piecewise cubic Hermite (or linear if ``slopes`` is None)."""
    n = nodes.size
    idx = np.clip(np.searchsorted(nodes, tq, side="right") - 1, 0, n - 2)
    t0, t1 = nodes[idx], nodes[idx + 1]
    y0, y1 = values[idx], values[idx + 1]
    if slopes is None:
        w = ((tq - t0) / (t1 - t0))[:, None]
        sec = (y1 - y0) / (t1 - t0)[:, None]
        return y0 + w * (y1 - y0), sec
    return hermite(tq, t0, t1, y0, y1, slopes[idx], slopes[idx + 1])


class HistorySegment:
    """A sampled continuous function on [-r, 0] with values in R^d.

    Interpolation is cubic Hermite when ``derivs`` is given and piecewise
    linear otherwise (``is_linear`` is then True). With ``r == 0`` the
    segment holds a single state and is identified with it.
    """

    __slots__ = ("r", "thetas", "values", "derivs", "_key", "_grid")

    def __init__(self, thetas, values, derivs=None):
        thetas = np.array(thetas, dtype=float, ndmin=1)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None] if thetas.size > 1 else values[None, :]
        if values.shape[0] != thetas.size:
            raise ValueError("one sample value per theta is required")
        if thetas[-1] != 0.0:
            raise ValueError("last sample must sit at theta = 0")
        if thetas.size > 1 and np.any(np.diff(thetas) <= 0):
            raise ValueError("thetas must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("segment samples must be finite")
        if derivs is not None:
            derivs = np.array(derivs, dtype=float).reshape(values.shape)
        self.r = float(-thetas[0])
        self.thetas = _frozen(thetas)
        self.values = _frozen(values)
        self.derivs = None if derivs is None or thetas.size == 1 else _frozen(derivs)
        self._key = None
        self._grid = thetas.tolist()

    @classmethod
    def constant(cls, x, r: float = 0.0, n_samples: int = DEFAULT_SEGMENT_SAMPLES):
        x = as_state(x)
        if r < 0:
            raise ValueError("r must be nonnegative")
        if r == 0:
            return cls([0.0], x[None, :])
        thetas = np.unique(np.linspace(-r, 0.0, n_samples))
        vals = np.broadcast_to(x, (thetas.size, x.size))
        return cls(thetas, vals, np.zeros_like(vals))

    @classmethod
    def from_function(cls, phi: Callable, r: float, dphi: Optional[Callable] = None,
                      n_samples: int = DEFAULT_SEGMENT_SAMPLES):
        """Sample ``phi`` (and optionally its derivative) on a uniform grid."""
        if r < 0:
            raise ValueError("r must be nonnegative")
        thetas = np.array([0.0]) if r == 0 else np.unique(np.linspace(-r, 0.0, n_samples))
        vals = np.array([np.atleast_1d(phi(th)) for th in thetas], dtype=float)
        ders = None
        if dphi is not None:
            ders = np.array([np.atleast_1d(dphi(th)) for th in thetas], dtype=float)
        return cls(thetas, vals, ders)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def is_linear(self) -> bool:
        return self.derivs is None and self.thetas.size > 1

    def _check(self, th):
        tol = 1e-12 * max(1.0, self.r)
        if np.any(th < -self.r - tol) or np.any(th > tol):
            raise DomainError(f"theta outside [-{self.r:g}, 0]")
        return np.clip(th, -self.r, 0.0)

    def __call__(self, theta):
        """Evaluate at a scalar theta (returns (d,)) or an array (returns (n, d))."""
        if isinstance(theta, (float, int)):
            return self._eval_scalar(float(theta))
        scalar = np.ndim(theta) == 0
        th = self._check(np.atleast_1d(np.asarray(theta, dtype=float)))
        if self.thetas.size == 1:
            out = np.broadcast_to(self.values[0], (th.size, self.dim)).copy()
        else:
            out, _ = _piecewise_eval(self.thetas, self.values, self.derivs, th)
        return out[0] if scalar else out

    def _eval_scalar(self, th: float) -> np.ndarray:
        r = self.r
        if th < -r - 1e-12 * max(1.0, r) or th > 1e-12 * max(1.0, r):
            raise DomainError(f"theta outside [-{r:g}, 0]")
        n = self.thetas.size
        if n == 1:
            return self.values[0].copy()
        i = min(max(bisect_right(self._grid, th) - 1, 0), n - 2)
        t0, t1 = self._grid[i], self._grid[i + 1]
        y0, y1 = self.values[i], self.values[i + 1]
        dt = t1 - t0
        s = min(max((th - t0) / dt, 0.0), 1.0)
        if self.derivs is None:
            return y0 + s * (y1 - y0)
        s2 = s * s
        s3 = s2 * s
        return ((2 * s3 - 3 * s2 + 1) * y0 + ((s3 - 2 * s2 + s) * dt) * self.derivs[i]
                + (3 * s2 - 2 * s3) * y1 + ((s3 - s2) * dt) * self.derivs[i + 1])

    def derivative(self, theta):
        scalar = np.ndim(theta) == 0
        th = self._check(np.atleast_1d(np.asarray(theta, dtype=float)))
        if self.thetas.size == 1:
            out = np.zeros((th.size, self.dim))
        else:
            _, out = _piecewise_eval(self.thetas, self.values, self.derivs, th)
        return out[0] if scalar else out

    def sup_norm(self) -> float:
        """Sup over the samples of the Euclidean norm."""
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def key(self) -> bytes:
        """Bit-pattern key used for memoisation."""
        if self._key is None:
            parts = [self.thetas.tobytes(), self.values.tobytes()]
            if self.derivs is not None:
                parts.append(self.derivs.tobytes())
            self._key = b"|".join(parts)
        return self._key

    def __repr__(self):
        return f"HistorySegment(r={self.r:g}, n={self.thetas.size}, d={self.dim})"


Argument = Union[np.ndarray, HistorySegment]


class Trajectory:
    """Dense-output solution on [t_start, t_end].

    Nodes carry values and derivatives; queries between nodes use cubic
    Hermite interpolation. For delay problems the initial interval
    (t < 0) is delegated to the initial history ``prefix`` through
    ``t = scale * theta``.
    """

    def __init__(self, t, x, dx, prefix: Optional[HistorySegment] = None,
                 scale: float = 1.0):
        t = _frozen(t)
        x = _frozen(np.asarray(x, dtype=float).reshape(t.size, -1))
        dx = _frozen(np.asarray(dx, dtype=float).reshape(x.shape))
        if t.size == 0:
            raise ValueError("trajectory needs at least one node")
        self._t, self._x, self._dx = t, x, dx
        self.prefix = prefix
        self.scale = float(scale)
        if prefix is not None and prefix.r > 0:
            th = prefix.thetas[:-1]
            self._pre_t = _frozen(scale * th)
            self._pre_x = prefix.values[:-1]
            self._pre_dx = _frozen(prefix.derivative(th) / scale)
        else:
            self._pre_t = _frozen(np.empty(0))
            self._pre_x = np.empty((0, x.shape[1]))
            self._pre_dx = self._pre_x

    @property
    def dim(self) -> int:
        return self._x.shape[1]

    @property
    def t_start(self) -> float:
        if self.prefix is not None and self.prefix.r > 0:
            return -self.scale * self.prefix.r
        return float(self._t[0])

    @property
    def t_end(self) -> float:
        return float(self._t[-1])

    @property
    def h(self) -> float:
        """Largest node spacing on the integrated part."""
        return float(np.max(np.diff(self._t))) if self._t.size > 1 else 0.0

    @property
    def nodes(self):
        """All nodes (t, x, dx), initial-history samples first."""
        return (np.concatenate([self._pre_t, self._t]),
                np.concatenate([self._pre_x, self._x]),
                np.concatenate([self._pre_dx, self._dx]))

    def _eval(self, t, want_derivative):
        scalar = np.ndim(t) == 0
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        span = max(1.0, abs(self.t_end), abs(self.t_start))
        tol = 1e-12 * span
        if np.any(tq < self.t_start - tol) or np.any(tq > self.t_end + tol):
            lo, hi = float(np.min(tq)), float(np.max(tq))
            raise DomainError(
                f"query [{lo:g}, {hi:g}] leaves trajectory domain "
                f"[{self.t_start:g}, {self.t_end:g}]")
        tq = np.clip(tq, self.t_start, self.t_end)
        out = np.empty((tq.size, self.dim))
        before = tq < self._t[0]
        if np.any(before):
            th = tq[before] / self.scale
            out[before] = (self.prefix.derivative(th) / self.scale if want_derivative
                           else self.prefix(th))
        after = ~before
        if np.any(after):
            if self._t.size == 1:
                out[after] = self._dx[0] if want_derivative else self._x[0]
            else:
                v, dv = _piecewise_eval(self._t, self._x, self._dx, tq[after])
                out[after] = dv if want_derivative else v
        return out[0] if scalar else out

    def query(self, t):
        return self._eval(t, False)

    def derivative(self, t):
        return self._eval(t, True)

    __call__ = query

    def __repr__(self):
        return (f"Trajectory([{self.t_start:g}, {self.t_end:g}], "
                f"nodes={self._t.size}, d={self.dim})")


def trajectory_history(traj, t: float, r: float, scale: float = 1.0,
                       n_samples: int = DEFAULT_SEGMENT_SAMPLES) -> HistorySegment:
    """Segment ``theta -> traj(t + scale*theta)`` on [-r, 0].

    ``scale = 1`` gives the fixed-delay history, ``scale = eps`` the
    shrunken history of normal-form equations.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    lo = t - scale * r
    if lo < traj.t_start - 1e-12 * max(1.0, abs(lo)) or t > traj.t_end + 1e-12 * max(1.0, abs(t)):
        raise DomainError(
            f"history window [{lo:g}, {t:g}] needs trajectory data outside "
            f"[{traj.t_start:g}, {traj.t_end:g}]")
    if r == 0:
        return HistorySegment([0.0], traj.query(t)[None, :])
    thetas = np.unique(np.linspace(-r, 0.0, n_samples))
    times = t + scale * thetas
    return HistorySegment(thetas, traj.query(times), scale * traj.derivative(times))


class FieldKind(str, Enum):
    POINTWISE_ODE = "pointwise_ode"
    POINTWISE_DELAY = "pointwise_delay"
    FUNCTIONAL = "functional"


@dataclass(frozen=True)
class FieldSpec:
    """A time-dependent vector field.

    ``func`` signature depends on ``kind``:

    * pointwise_ode: ``func(t, x)``
    * pointwise_delay: ``func(t, x, xd)`` with ``xd = x(t - delay)`` in
      history coordinates (the solver applies the time scale)
    * functional: ``func(t, seg)`` with ``seg`` a :class:`HistorySegment`

    Evaluators must be pure. When ``vectorized`` is set, ``t`` may be a 1-D
    array and the result must broadcast to shape (d, len(t)).
    """

    kind: FieldKind
    dim: int
    func: Callable
    delay: float = 0.0
    period: Optional[float] = None
    vectorized: bool = False
    autonomous: bool = False
    name: str = ""
    source: Optional[tuple] = dc_field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", FieldKind(self.kind))
        if self.dim < 1:
            raise ValueError("field dimension must be >= 1")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")
        if self.kind is FieldKind.POINTWISE_DELAY and self.delay <= 0:
            raise ValueError("pointwise_delay fields need a positive delay")
        if self.period is not None and not self.period > 0:
            raise ValueError("declared period must be positive")

    @property
    def needs_history(self) -> bool:
        return self.kind is not FieldKind.POINTWISE_ODE

    def __call__(self, t, arg) -> np.ndarray:
        """Evaluate at one time and a state (pointwise_ode) or segment."""
        if self.kind is FieldKind.POINTWISE_ODE:
            out = self.func(t, arg)
        elif self.kind is FieldKind.POINTWISE_DELAY:
            out = self.func(t, arg(0.0), arg(-self.delay))
        else:
            out = self.func(t, arg)
        return np.asarray(out, dtype=float).reshape(self.dim)

    def sample(self, ts: np.ndarray, arg) -> np.ndarray:
        """Values at many times for a fixed argument, shape (len(ts), d)."""
        ts = np.asarray(ts, dtype=float)
        if not self.vectorized:
            return np.array([self(t, arg) for t in ts]).reshape(ts.size, self.dim)
        if self.kind is FieldKind.POINTWISE_DELAY:
            out = self.func(ts, arg(0.0), arg(-self.delay))
        else:
            out = self.func(ts, arg)
        if not isinstance(out, (list, tuple)):
            arr = np.asarray(out, dtype=float)
            out = [arr] if self.dim == 1 and arr.shape[:1] != (1,) else list(arr)
        if len(out) != self.dim:
            raise ValueError(f"field returned {len(out)} components, expected {self.dim}")
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), ts.shape)
                         for c in out], axis=1)


class EquationClass(str, Enum):
    FAST_ODE = "fast_ode"
    AVERAGED_ODE = "averaged_ode"
    RFDE_NORMAL_FORM = "rfde_normal_form"
    FAST_RFDE = "fast_rfde"
    AVERAGED_RFDE = "averaged_rfde"
    AVERAGED_RFDE_SCALED = "averaged_rfde_scaled"


_ODE_CLASSES = {EquationClass.FAST_ODE, EquationClass.AVERAGED_ODE}
_NEEDS_EPS = {EquationClass.FAST_ODE, EquationClass.RFDE_NORMAL_FORM,
              EquationClass.FAST_RFDE, EquationClass.AVERAGED_RFDE_SCALED}


@dataclass(frozen=True)
class ProblemSpec:
    """An initial value problem of one of the six supported classes.

    ``initial`` is a state for the ODE classes and a history segment on
    [-r, 0] otherwise (applied as ``x(t) = phi(t/eps)`` for the
    normal-form classes and ``x_0 = phi`` for the fixed-delay ones).
    """

    equation_class: EquationClass
    field: FieldSpec
    initial: Argument
    L: float
    epsilon: Optional[float] = None
    r: float = 0.0

    def __post_init__(self):
        cls = EquationClass(self.equation_class)
        object.__setattr__(self, "equation_class", cls)
        if not self.L > 0:
            raise ValueError("horizon L must be positive")
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        if cls in _NEEDS_EPS:
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError(f"{cls.value} requires a positive epsilon")
        if cls in _ODE_CLASSES:
            if self.r != 0:
                raise ValueError(f"{cls.value} requires r = 0")
            if self.field.kind is not FieldKind.POINTWISE_ODE:
                raise ValueError(f"{cls.value} requires a pointwise_ode field")
            object.__setattr__(self, "initial", as_state(self.initial, self.field.dim))
        else:
            if self.field.kind is FieldKind.POINTWISE_ODE:
                raise ValueError(f"{cls.value} requires a delay or functional field")
            init = self.initial
            if not isinstance(init, HistorySegment):
                init = HistorySegment.constant(init, self.r)
                object.__setattr__(self, "initial", init)
            if abs(init.r - self.r) > 1e-12 * max(1.0, self.r):
                raise ValueError(f"initial segment spans r={init.r:g}, problem has r={self.r:g}")
            if init.dim != self.field.dim:
                raise ValueError("initial segment dimension does not match the field")
            if (self.field.kind is FieldKind.POINTWISE_DELAY
                    and abs(self.field.delay - self.r) > 1e-12 * max(1.0, self.r)):
                raise ValueError("pointwise delay must equal the history span r")

    def with_epsilon(self, epsilon: float) -> "ProblemSpec":
        return ProblemSpec(self.equation_class, self.field, self.initial, self.L, epsilon, self.r)

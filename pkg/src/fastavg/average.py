"""Averaged vector fields.

Three estimators of the time average of ``f(., x)``: one-period
quadrature, the Cesaro limit of running means, and a shifted-window
variant that checks uniformity in the window start. ``build_averaged_field``
wraps an estimator into an autonomous, memoised :class:`FieldSpec`.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .core import Argument, FieldKind, FieldSpec, HistorySegment, as_state

PANEL_WIDTH = 0.05
DEFAULT_TOL = {"periodic": 1e-6, "cesaro": 1e-4, "almost_periodic": 1e-3}
DEFAULT_PROBES = (0.0, 1.0, math.e, 10 * math.pi)
_BLOCK_PAIRS = 1 << 16


class AveragingError(RuntimeError):
    pass


class NoAverageError(AveragingError):
    """Running means did not settle before ``T_max``."""

    def __init__(self, message, previous=None, last=None, residual=None):
        super().__init__(message)
        self.previous = previous
        self.last = last
        self.residual = residual


class NotAlmostPeriodicError(AveragingError):
    """Averages started at different times disagree."""

    def __init__(self, message, estimates=None, spread=None):
        super().__init__(message)
        self.estimates = estimates
        self.spread = spread


@dataclass(frozen=True)
class AverageEstimate:
    value: np.ndarray
    horizon_T: float
    residual: float
    mode: str


def _check_arg(field: FieldSpec, x: Argument) -> Argument:
    if field.kind is FieldKind.POINTWISE_ODE:
        if isinstance(x, HistorySegment):
            raise TypeError("pointwise_ode fields are averaged at a state, not a segment")
        return as_state(x, field.dim)
    if not isinstance(x, HistorySegment):
        raise TypeError(f"{field.kind.value} fields are averaged at a HistorySegment; "
                        "use lift_constant_history for a constant one")
    if field.kind is FieldKind.POINTWISE_DELAY and x.r < field.delay - 1e-12:
        raise ValueError(f"segment spans {x.r:g}, field delay is {field.delay:g}")
    return x


def _even_panels(length: float, minimum: int = 2) -> int:
    n = max(minimum, math.ceil(length / PANEL_WIDTH - 1e-9))
    return n + (n % 2)


def _default_n_quad(T: float) -> int:
    # multiple of 4 so the coarse rule is plain Simpson as well
    n = max(16, _even_panels(T))
    return n + n % 4


def average_periodic(field: FieldSpec, x: Argument, T: Optional[float] = None,
                     n_quad: Optional[int] = None) -> AverageEstimate:
    """Mean of ``f(t, x)`` over one period by composite Simpson.

    The residual is the change against the same rule on every other node.
    """
    T = field.period if T is None else T
    if T is None or not T > 0:
        raise ValueError("a positive period is required for periodic averaging")
    if n_quad is None:
        n_quad = _default_n_quad(T)
    if n_quad % 2 or n_quad < 16:
        raise ValueError(f"n_quad must be an even integer >= 16, got {n_quad}")
    x = _check_arg(field, x)
    ts = np.linspace(0.0, T, n_quad + 1)
    vals = field.sample(ts, x)
    fine = simpson(vals, x=ts, axis=0) / T
    coarse = simpson(vals[::2], x=ts[::2], axis=0) / T
    return AverageEstimate(fine, float(T), float(np.linalg.norm(fine - coarse)), "periodic")


def _running_integral(field, x, a, b):
    """Composite Simpson on [a, b], yielded block by block as
    (pair end times, cumulative integral from a at those times)."""
    n = _even_panels(b - a)
    h = (b - a) / n
    pairs = n // 2
    done = 0
    acc = np.zeros(field.dim)
    while done < pairs:
        m = min(_BLOCK_PAIRS, pairs - done)
        j = 2 * done + np.arange(2 * m + 1)
        ts = a + h * j
        ts[-1] = b if done + m == pairs else ts[-1]
        f = field.sample(ts, x)
        pair = (h / 3.0) * (f[0:-1:2] + 4.0 * f[1::2] + f[2::2])
        cum = acc + np.cumsum(pair, axis=0)
        yield ts[2::2], cum
        acc = cum[-1]
        done += m


def average_cesaro(field: FieldSpec, x: Argument, tol: float = DEFAULT_TOL["cesaro"],
                   T0: float = 1.0, T_max: float = 1e6, s: float = 0.0) -> AverageEstimate:
    """Limit of ``(1/T) * int_s^{s+T} f(t, x) dt`` by doubling ``T``.

    Each doubling integrates only the new window [T, 2T]. The estimate
    ``A(2T)`` is accepted when every running mean ``A(tau)``, tau in
    [T, 2T] (sampled at Simpson pair ends, tau = T included), lies within
    ``tol`` of it; the residual is that largest deviation.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if T0 < 1:
        raise ValueError("T0 must be >= 1")
    if T_max < 4 * T0:
        raise ValueError("T_max must be >= 4*T0")
    x = _check_arg(field, x)
    total = np.zeros(field.dim)
    for _, cum in _running_integral(field, x, s, s + T0):
        total = cum[-1]
    T = float(T0)
    A_T = total / T
    prev, last_residual = None, math.inf
    while 2 * T <= T_max * (1 + 1e-12):
        lo = np.array(A_T, dtype=float)
        hi = lo.copy()
        chunk_total = np.zeros(field.dim)
        for taus, cum in _running_integral(field, x, s + T, s + 2 * T):
            means = (total + cum) / (taus - s)[:, None]
            np.minimum(lo, means.min(axis=0), out=lo)
            np.maximum(hi, means.max(axis=0), out=hi)
            chunk_total = cum[-1]
        total = total + chunk_total
        A_2T = total / (2 * T)
        dev = np.maximum(hi - A_2T, A_2T - lo)
        residual = float(np.linalg.norm(dev))
        if not np.all(np.isfinite(A_2T)):
            raise NoAverageError("non-finite running mean", A_T, A_2T, math.inf)
        if residual < tol:
            return AverageEstimate(A_2T, 2 * T, residual, "cesaro")
        prev, A_T, T = A_T, A_2T, 2 * T
        last_residual = residual
    raise NoAverageError(
        f"running means did not settle to tol={tol:g} by T_max={T_max:g} "
        f"(last residual {last_residual:.3g})",
        previous=prev, last=A_T, residual=last_residual)


def average_almost_periodic(field: FieldSpec, x: Argument,
                            tol: float = DEFAULT_TOL["almost_periodic"],
                            s_probes: Sequence[float] = DEFAULT_PROBES,
                            T0: float = 1.0, T_max: float = 1e6) -> AverageEstimate:
    """Cesaro averages started at each probe time; their spread tests uniformity.

    Returns the first probe's estimate with ``residual`` set to the largest
    pairwise distance between probe estimates.
    """
    probes = list(s_probes)
    if not probes:
        raise ValueError("s_probes must be nonempty")
    ests = [average_cesaro(field, x, tol=tol, T0=T0, T_max=T_max, s=s) for s in probes]
    vals = np.array([e.value for e in ests])
    spread = 0.0
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            spread = max(spread, float(np.linalg.norm(vals[i] - vals[j])))
    if spread > 10 * tol:
        raise NotAlmostPeriodicError(
            f"window averages depend on the start time (spread {spread:.3g} > {10 * tol:g})",
            estimates=vals, spread=spread)
    first = ests[0]
    return AverageEstimate(first.value, first.horizon_T, spread, "almost_periodic")


def lift_constant_history(x, r: float) -> HistorySegment:
    """The constant segment ``theta -> x`` on [-r, 0]."""
    return HistorySegment.constant(x, r)


class AveragedEvaluator:
    """Callable behind an averaged field; memoises by argument bit pattern."""

    def __init__(self, field: FieldSpec, mode: str, tol: float, lift_r: Optional[float],
                 options: dict):
        self.field = field
        self.mode = mode
        self.tol = tol
        self.lift_r = lift_r
        self.options = options
        self._memo: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def estimate(self, arg: Argument) -> AverageEstimate:
        f, opts = self.field, self.options
        if self.mode == "periodic":
            T = opts.get("period") or f.period
            n = opts.get("n_quad") or _default_n_quad(T)
            est = average_periodic(f, arg, T, n)
            while est.residual > self.tol and "n_quad" not in opts:
                n *= 2
                if n > 1 << 22:
                    raise NoAverageError(f"period quadrature did not reach tol={self.tol:g}",
                                         last=est.value, residual=est.residual)
                est = average_periodic(f, arg, T, n)
            return est
        if self.mode == "cesaro":
            return average_cesaro(f, arg, tol=self.tol, T0=opts.get("T0", 1.0),
                                  T_max=opts.get("T_max", 1e6))
        if self.mode == "almost_periodic":
            return average_almost_periodic(f, arg, tol=self.tol,
                                           s_probes=opts.get("s_probes", DEFAULT_PROBES),
                                           T0=opts.get("T0", 1.0),
                                           T_max=opts.get("T_max", 1e6))
        raise ValueError(f"unknown averaging mode {self.mode!r}")

    def _lookup(self, key, make_arg) -> np.ndarray:
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        value = self.estimate(make_arg()).value
        value.setflags(write=False)
        with self._lock:
            self._memo.setdefault(key, value)
        return value

    def __call__(self, t, *args):
        kind = self.field.kind
        if self.lift_r is not None:
            x = np.asarray(args[0], dtype=float)
            return self._lookup(x.tobytes(), lambda: lift_constant_history(x, self.lift_r))
        if kind is FieldKind.POINTWISE_ODE:
            x = np.asarray(args[0], dtype=float)
            return self._lookup(x.tobytes(), lambda: x)
        if kind is FieldKind.POINTWISE_DELAY:
            x = np.asarray(args[0], dtype=float)
            xd = np.asarray(args[1], dtype=float)
            r = self.field.delay
            return self._lookup(x.tobytes() + b"|" + xd.tobytes(),
                                lambda: HistorySegment([-r, 0.0], np.stack([xd, x])))
        seg = args[0]
        return self._lookup(seg.key(), lambda: seg)

    def cache_size(self) -> int:
        return len(self._memo)


def build_averaged_field(field: FieldSpec, mode: str = "periodic", tol: Optional[float] = None,
                         lift: bool = False, r: Optional[float] = None, **options) -> FieldSpec:
    """Autonomous field evaluating the average of ``field`` at its argument.

    With ``lift=True`` the result is the ODE field ``G(x) = F(x~)``, ``x~``
    the constant segment on [-r, 0] (``r`` defaults to the field delay).
    Otherwise the result has the same kind as ``field``.
    Extra options go to the estimator (``period``, ``n_quad``, ``T0``,
    ``T_max``, ``s_probes``).
    """
    if mode not in DEFAULT_TOL:
        raise ValueError(f"unknown averaging mode {mode!r}")
    if mode == "periodic" and options.get("period", field.period) is None:
        raise ValueError("periodic mode needs a declared period")
    tol = DEFAULT_TOL[mode] if tol is None else tol
    lift_r = None
    if lift:
        if field.kind is FieldKind.POINTWISE_ODE:
            raise ValueError("lifting applies to delay or functional fields")
        lift_r = field.delay if r is None else float(r)
        if field.kind is FieldKind.POINTWISE_DELAY and lift_r < field.delay:
            raise ValueError("lift span must cover the field delay")
    evaluator = AveragedEvaluator(field, mode, tol, lift_r, options)
    kind = FieldKind.POINTWISE_ODE if lift else field.kind
    delay = field.delay if kind is FieldKind.POINTWISE_DELAY else 0.0
    return FieldSpec(kind, field.dim, evaluator, delay=delay, autonomous=True,
                     name=f"avg[{mode}]({field.name})")

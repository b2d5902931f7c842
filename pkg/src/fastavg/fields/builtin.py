"""Built-in test systems with closed-form references."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import EquationClass, FieldKind, FieldSpec, HistorySegment, ProblemSpec
from .expr import eval_expr, parse_field_expr, uses_time

SQRT2 = math.sqrt(2.0)


def expression_field(sources: Sequence[str] | str, d: int = 1, kind="pointwise_ode",
                     delay: float = 0.0, period: Optional[float] = None,
                     name: str = "") -> FieldSpec:
    """A vectorised field whose components are expression texts."""
    if isinstance(sources, str):
        sources = [s for s in sources.split(";")]
    sources = [s.strip() for s in sources]
    if len(sources) != d:
        raise ValueError(f"{len(sources)} component expressions given for d = {d}")
    kind = FieldKind(kind)
    if kind is FieldKind.FUNCTIONAL:
        raise ValueError("expression fields are pointwise (ode or delay)")
    asts = [parse_field_expr(s, d, kind) for s in sources]

    if kind is FieldKind.POINTWISE_ODE:
        def func(t, x):
            return [eval_expr(a, t, x) for a in asts]
    else:
        def func(t, x, xd):
            return [eval_expr(a, t, x, xd) for a in asts]

    return FieldSpec(kind, d, func, delay=delay, period=period, vectorized=True,
                     autonomous=not any(uses_time(a) for a in asts),
                     name=name or "; ".join(sources), source=tuple(sources))


def delayed_exponential_reference(t):
    """Solution of ``y' = -y(t - 1)`` with ``y = 1`` on [-1, 0] (method of steps)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.ones_like(t)
    pos = t > 0
    tp = t[pos]
    acc = np.zeros_like(tp)
    kmax = int(np.floor(tp.max())) + 1 if tp.size else 0
    for k in range(kmax + 1):
        active = tp >= k - 1
        term = (-1.0) ** k * np.clip(tp - (k - 1), 0.0, None) ** k / math.factorial(k)
        acc += np.where(active, term, 0.0)
    out[pos] = acc
    return out[:, None]


@dataclass(frozen=True)
class CatalogEntry:
    """A named test problem.

    ``reference(t, eps)`` and ``averaged_reference(t)`` return arrays of
    shape (len(t), d) when a closed form is known.
    """

    name: str
    problem: ProblemSpec
    period: Optional[float]
    expressions: tuple
    description: str
    reference: Optional[Callable] = None
    averaged_reference: Optional[Callable] = None
    averaged_mode: str = "periodic"

    @property
    def field(self) -> FieldSpec:
        return self.problem.field

    def text_field(self) -> FieldSpec:
        """The same field rebuilt from its expression text."""
        f = self.field
        return expression_field(list(self.expressions), f.dim, f.kind, f.delay, f.period, self.name)


def _col(v):
    return np.atleast_1d(np.asarray(v, dtype=float))[:, None]


def _linear_osc():
    func = lambda t, x: [(1.0 - np.cos(2.0 * t)) * x[0]]
    f = FieldSpec(FieldKind.POINTWISE_ODE, 1, func, period=math.pi, vectorized=True,
                  name="linear-osc-ode")
    return CatalogEntry(
        "linear-osc-ode",
        ProblemSpec(EquationClass.FAST_ODE, f, [1.0], 1.0, 0.01),
        math.pi, ("(1 - cos(2*t)) * x1",),
        "x' = (1 - cos(2t/eps)) x, x(0) = 1",
        reference=lambda t, eps: _col(np.exp(t - 0.5 * eps * np.sin(2.0 * np.asarray(t) / eps))),
        averaged_reference=lambda t: _col(np.exp(t)),
    )


def _damped_forced():
    func = lambda t, x: [-x[0] + np.sin(t)]
    f = FieldSpec(FieldKind.POINTWISE_ODE, 1, func, period=2 * math.pi, vectorized=True,
                  name="damped-forced-ode")

    def ref(t, eps):
        t = np.asarray(t, dtype=float)
        w = 1.0 / eps
        a = 1.0 / (1.0 + w * w)
        b = -w * a
        return _col((1.0 - b) * np.exp(-t) + a * np.sin(w * t) + b * np.cos(w * t))

    return CatalogEntry(
        "damped-forced-ode",
        ProblemSpec(EquationClass.FAST_ODE, f, [1.0], 2.0, 0.01),
        2 * math.pi, ("-x1 + sin(t)",),
        "x' = -x + sin(t/eps), x(0) = 1",
        reference=ref,
        averaged_reference=lambda t: _col(np.exp(-np.asarray(t, dtype=float))),
    )


def _quasi_periodic():
    func = lambda t, x: [np.sin(t) + np.sin(SQRT2 * t) + 0.0 * x[0]]
    f = FieldSpec(FieldKind.POINTWISE_ODE, 1, func, vectorized=True, name="quasi-periodic-ode")

    def ref(t, eps):
        t = np.asarray(t, dtype=float)
        return _col(eps * (1.0 - np.cos(t / eps)) + eps / SQRT2 * (1.0 - np.cos(SQRT2 * t / eps)))

    return CatalogEntry(
        "quasi-periodic-ode",
        ProblemSpec(EquationClass.FAST_ODE, f, [0.0], 1.0, 0.01),
        None, ("sin(t) + sin(sqrt(2)*t) + 0*x1",),
        "x' = sin(t/eps) + sin(sqrt(2) t/eps), x(0) = 0",
        reference=ref,
        averaged_reference=lambda t: _col(np.zeros_like(np.asarray(t, dtype=float))),
        averaged_mode="almost_periodic",
    )


def _delay_func(t, x, xd):
    return [-(1.0 - np.cos(2.0 * t)) * xd[0]]


def _delay_normal_form():
    f = FieldSpec(FieldKind.POINTWISE_DELAY, 1, _delay_func, delay=1.0, period=math.pi,
                  vectorized=True, name="delay-normal-form")
    return CatalogEntry(
        "delay-normal-form",
        ProblemSpec(EquationClass.RFDE_NORMAL_FORM, f, HistorySegment.constant([1.0], 1.0),
                    1.0, 0.01, r=1.0),
        math.pi, ("-(1 - cos(2*t)) * xd1",),
        "x' = -(1 - cos(2t/eps)) x(t - eps), x = 1 on [-eps, 0]",
        averaged_reference=lambda t: _col(np.exp(-np.asarray(t, dtype=float))),
    )


def _delay_fast_rfde():
    f = FieldSpec(FieldKind.POINTWISE_DELAY, 1, _delay_func, delay=1.0, period=math.pi,
                  vectorized=True, name="delay-fast-rfde")
    return CatalogEntry(
        "delay-fast-rfde",
        ProblemSpec(EquationClass.FAST_RFDE, f, HistorySegment.constant([1.0], 1.0),
                    2.0, 0.01, r=1.0),
        math.pi, ("-(1 - cos(2*t)) * xd1",),
        "x' = -(1 - cos(2t/eps)) x(t - 1), x = 1 on [-1, 0]",
        averaged_reference=delayed_exponential_reference,
    )


def _derivative(fn, t, h):
    # five-point central difference
    return (-fn(t + 2 * h) + 8 * fn(t + h) - 8 * fn(t - h) + fn(t - 2 * h)) / (12 * h)


def _self_check(entry: CatalogEntry, eps: float = 0.1, n: int = 17) -> float:
    """Largest residual of the closed forms in their own equations."""
    from ..average import average_periodic

    f = entry.field
    worst = 0.0
    L = entry.problem.L
    ts = np.linspace(0.05, L - 0.05, n)
    if entry.problem.equation_class is EquationClass.FAST_RFDE:
        ts = ts[np.abs(ts - np.round(ts)) > 0.02]  # derivative kinks at integers
    if entry.reference is not None:
        ref = lambda s: entry.reference(s, eps)
        h = 1e-3 * eps
        for t in ts:
            lhs = _derivative(ref, t, h)[0]
            rhs = f(t / eps, ref(t)[0])
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    if entry.averaged_reference is not None and entry.period is not None:
        yref = entry.averaged_reference
        for t in ts:
            lhs = _derivative(yref, t, 1e-3)[0]
            y = yref(t)[0]
            if f.kind is FieldKind.POINTWISE_ODE:
                arg = y
            elif entry.problem.equation_class is EquationClass.RFDE_NORMAL_FORM:
                arg = HistorySegment.constant(y, f.delay)
            else:
                arg = HistorySegment([-f.delay, 0.0], np.stack([yref(t - f.delay)[0], y]))
            rhs = average_periodic(f, arg).value
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


@lru_cache(maxsize=1)
def _entries() -> tuple:
    entries = (_linear_osc(), _damped_forced(), _quasi_periodic(), _delay_normal_form(),
               _delay_fast_rfde())
    for e in entries:
        worst = _self_check(e)
        if worst > 1e-8:
            raise RuntimeError(f"catalog entry {e.name}: closed form residual {worst:.3g}")
    return entries


def catalog() -> list:
    """All built-in entries (closed forms verified on first call)."""
    return list(_entries())


def get_entry(name: str) -> CatalogEntry:
    for e in _entries():
        if e.name == name:
            return e
    names = ", ".join(e.name for e in _entries())
    raise KeyError(f"unknown catalog entry {name!r}; available: {names}")

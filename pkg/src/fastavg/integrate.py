"""Fixed-step RK4 for fast-oscillating ODEs and method-of-steps RFDEs.

All solvers share one loop: classical RK4 on a uniform grid, node
derivatives stored for cubic Hermite dense output, and stage history read
from the dense output of the part already computed. The step cap keeps
every delayed read behind the last completed node, so no implicit
iteration is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (DEFAULT_SEGMENT_SAMPLES, EquationClass, FieldKind, FieldSpec,
                   HistorySegment, ProblemSpec, Trajectory, hermite)


class IntegrationError(RuntimeError):
    pass


class BlowUpError(IntegrationError):
    """The state left the ball of radius ``blow_up_bound`` before the horizon."""

    def __init__(self, escape_time: float, norm: float):
        self.escape_time = float(escape_time)
        self.norm = float(norm)
        super().__init__(f"solution escaped (|x| = {norm:.3g}) at t = {escape_time:.6g}")


class NonFiniteError(BlowUpError):
    """The state became NaN or infinite (typically a singular field)."""

    def __init__(self, escape_time: float):
        self.escape_time = float(escape_time)
        self.norm = math.inf
        IntegrationError.__init__(self, f"non-finite state at t = {escape_time:.6g}")


class NodeBudgetError(IntegrationError, ValueError):
    """The step policy needs more nodes than ``max_nodes`` allows."""


class HistoryUnderrunError(IntegrationError):
    """A stage asked for history that has not been computed yet."""


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    blow_up_bound: float = 1e8
    max_nodes: int = 10_000_000
    history_samples: int = DEFAULT_SEGMENT_SAMPLES

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if not self.blow_up_bound > 0:
            raise ValueError("blow_up_bound must be positive")
        if self.max_nodes < 2:
            raise ValueError("max_nodes must be at least 2")
        if self.history_samples < 2:
            raise ValueError("history_samples must be at least 2")


# (fast time, history scale is eps, fixed-delay history)
_REGIMES = {
    EquationClass.FAST_ODE: (True, False, False),
    EquationClass.AVERAGED_ODE: (False, False, False),
    EquationClass.RFDE_NORMAL_FORM: (True, True, False),
    EquationClass.FAST_RFDE: (True, False, True),
    EquationClass.AVERAGED_RFDE: (False, False, True),
    EquationClass.AVERAGED_RFDE_SCALED: (False, True, False),
}


def effective_step(problem: ProblemSpec, cfg: IntegratorConfig) -> float:
    """Step actually used for ``problem``.

    Fast fields cap the step at eps*T_f/20 (declared period T_f) or eps/10.
    Delays are resolved by whole numbers of steps: a scaled delay eps*r
    gets at least two steps, a fixed delay r at least one.
    """
    fast, scaled, fixed = _REGIMES[problem.equation_class]
    eps, r = problem.epsilon, problem.r
    h = cfg.h
    if fast:
        period = problem.field.period
        h = min(h, eps * period / 20 if period else eps / 10)
    if scaled and r > 0:
        delay = eps * r
        h = delay / max(2, math.ceil(delay / h))
    elif fixed and r > 0:
        h = r / max(1, math.ceil(r / h))
    return h


class _DenseBuffer:
    """Growing node storage with the same query semantics as Trajectory."""

    def __init__(self, n_nodes, dim, prefix: Optional[HistorySegment], scale, h):
        self.h = h
        self.t = np.zeros(n_nodes)
        self.x = np.zeros((n_nodes, dim))
        self.dx = np.zeros((n_nodes, dim))
        self.complete = 0  # nodes whose derivative is known
        self.prefix = prefix if prefix is not None and prefix.r > 0 else None
        self.scale = scale

    def query(self, tq: float) -> np.ndarray:
        if tq < 0.0 and self.prefix is not None:
            return self.prefix(tq / self.scale)
        nc = self.complete
        t_last = self.t[nc - 1] if nc else 0.0
        if tq > t_last + 1e-12 * max(1.0, abs(t_last)) or (nc == 0 and tq > 0):
            raise HistoryUnderrunError(
                f"history requested at t = {tq:.9g} but only known up to {t_last:.9g}")
        if nc < 2 or tq <= 0.0:
            return (self.x[0] if nc else self.prefix(0.0)).copy()
        # uniform grid except possibly the final step
        i = min(int(tq / self.h), nc - 2)
        t0 = self.t[i]
        if tq < t0:
            i -= 1
            t0 = self.t[i]
        dt = self.t[i + 1] - t0
        s = (tq - t0) / dt
        s2 = s * s
        s3 = s2 * s
        return ((2 * s3 - 3 * s2 + 1) * self.x[i] + ((s3 - 2 * s2 + s) * dt) * self.dx[i]
                + (3 * s2 - 2 * s3) * self.x[i + 1] + ((s3 - s2) * dt) * self.dx[i + 1])

    def query_many(self, tq: np.ndarray):
        """Values and derivatives at sorted times, all within the known part."""
        vals = np.empty((tq.size, self.x.shape[1]))
        ders = np.empty_like(vals)
        neg = tq < 0.0
        if np.any(neg):
            th = tq[neg] / self.scale
            vals[neg] = self.prefix(th)
            ders[neg] = self.prefix.derivative(th) / self.scale
        pos = ~neg
        if np.any(pos):
            nc = self.complete
            tp = tq[pos]
            if nc < 2:
                vals[pos] = self.x[0]
                ders[pos] = self.dx[0]
            else:
                idx = np.clip(np.searchsorted(self.t[:nc], tp, side="right") - 1, 0, nc - 2)
                vals[pos], ders[pos] = hermite(tp, self.t[idx], self.t[idx + 1], self.x[idx],
                                               self.x[idx + 1], self.dx[idx], self.dx[idx + 1])
        return vals, ders

    def segment(self, t, y, r, scale, thetas) -> HistorySegment:
        """History segment at stage time ``t`` with stage state ``y``.

        Samples later than the last completed node lie inside the current
        step; they are filled by linear interpolation towards the stage
        state, which is exact at theta = 0.
        """
        times = t + scale * thetas
        nc = self.complete
        t_c = self.t[nc - 1] if nc else 0.0
        known = times <= t_c
        known[-1] = False
        vals = np.empty((thetas.size, y.size))
        ders = np.empty_like(vals)
        if np.any(known):
            vals[known], ders[known] = self.query_many(times[known])
            ders[known] *= scale
        fresh = ~known
        x_c = self.x[nc - 1] if nc else self.prefix(0.0)
        if t > t_c:
            slope = (y - x_c) / (t - t_c)
            vals[fresh] = x_c + (times[fresh] - t_c)[:, None] * slope
            ders[fresh] = scale * slope
        else:
            vals[fresh] = y
            ders[fresh] = 0.0
        return HistorySegment(thetas, vals, ders)


def _make_rhs(problem: ProblemSpec, buf: _DenseBuffer, cfg: IntegratorConfig):
    fast, scaled, fixed = _REGIMES[problem.equation_class]
    field: FieldSpec = problem.field
    eps = problem.epsilon
    tscale = 1.0 / eps if fast else 1.0
    func = field.func
    dim = field.dim

    if field.kind is FieldKind.POINTWISE_ODE:
        def rhs(t, y):
            return np.asarray(func(t * tscale, y), dtype=float).reshape(dim)
        return rhs

    hscale = eps if scaled else 1.0
    r = problem.r
    if field.kind is FieldKind.POINTWISE_DELAY:
        delay = hscale * field.delay

        def rhs(t, y):
            return np.asarray(func(t * tscale, y, buf.query(t - delay)), dtype=float).reshape(dim)
        return rhs

    if r == 0:
        def rhs(t, y):
            seg = HistorySegment([0.0], y[None, :])
            return np.asarray(func(t * tscale, seg), dtype=float).reshape(dim)
        return rhs

    thetas = np.linspace(-r, 0.0, cfg.history_samples)

    def rhs(t, y):
        seg = buf.segment(t, y, r, hscale, thetas)
        return np.asarray(func(t * tscale, seg), dtype=float).reshape(dim)
    return rhs


def _integrate(problem: ProblemSpec, cfg: IntegratorConfig) -> Trajectory:
    fast, scaled, fixed = _REGIMES[problem.equation_class]
    h = effective_step(problem, cfg)
    L = problem.L
    n_steps = max(1, math.ceil(L / h - 1e-9))
    if n_steps + 1 > cfg.max_nodes:
        raise NodeBudgetError(f"{n_steps + 1} nodes needed, max_nodes is {cfg.max_nodes}")
    init = problem.initial
    if isinstance(init, HistorySegment):
        prefix = init
        x0 = init(0.0)
    else:
        prefix = None
        x0 = np.asarray(init, dtype=float)
    hscale = problem.epsilon if scaled else 1.0
    buf = _DenseBuffer(n_steps + 1, x0.size, prefix, hscale, h)
    rhs = _make_rhs(problem, buf, cfg)
    bound = cfg.blow_up_bound

    grid = np.arange(n_steps + 1) * h
    grid[-1] = L
    buf.t[:] = grid
    buf.x[0] = x0
    x = x0.copy()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for n in range(n_steps):
            t = grid[n]
            dt = grid[n + 1] - t
            k1 = rhs(t, x)
            buf.dx[n] = k1
            buf.complete = n + 1
            k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1)
            k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2)
            k4 = rhs(t + dt, x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(grid[n + 1])
            norm = float(np.sqrt(np.dot(x, x)))
            if norm > bound:
                raise BlowUpError(grid[n + 1], norm)
            buf.x[n + 1] = x
        last = rhs(grid[-1], x)
        if not np.all(np.isfinite(last)):
            raise NonFiniteError(grid[-1])
        buf.dx[n_steps] = last
        buf.complete = n_steps + 1
    return Trajectory(buf.t, buf.x, buf.dx, prefix=prefix, scale=hscale)


def _expect(problem: ProblemSpec, *classes: EquationClass):
    if problem.equation_class not in classes:
        names = ", ".join(c.value for c in classes)
        raise ValueError(f"expected a problem of class {names}, got {problem.equation_class.value}")


def solve_fast_ode(problem: ProblemSpec, cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Solve ``x' = f(t/eps, x)`` on [0, L]."""
    _expect(problem, EquationClass.FAST_ODE)
    return _integrate(problem, cfg)


def solve_averaged_ode(problem: ProblemSpec, cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Solve the autonomous averaged ODE ``y' = F(y)`` on [0, L]."""
    _expect(problem, EquationClass.AVERAGED_ODE)
    return _integrate(problem, cfg)


def solve_rfde_normal_form(problem: ProblemSpec,
                           cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Solve ``x' = f(t/eps, x_{t,eps})`` with ``x(t) = phi(t/eps)`` on [-eps r, 0]."""
    _expect(problem, EquationClass.RFDE_NORMAL_FORM)
    return _integrate(problem, cfg)


def solve_fast_rfde(problem: ProblemSpec, cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Solve ``x' = f(t/eps, x_t)`` with ``x_0 = phi`` by the method of steps."""
    _expect(problem, EquationClass.FAST_RFDE)
    return _integrate(problem, cfg)


def solve_averaged_rfde(problem: ProblemSpec,
                        cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Solve ``y' = F(y_t)``, or ``y' = F(y_{t,eps})`` for the scaled variant."""
    _expect(problem, EquationClass.AVERAGED_RFDE, EquationClass.AVERAGED_RFDE_SCALED)
    return _integrate(problem, cfg)


_DISPATCH = {
    EquationClass.FAST_ODE: solve_fast_ode,
    EquationClass.AVERAGED_ODE: solve_averaged_ode,
    EquationClass.RFDE_NORMAL_FORM: solve_rfde_normal_form,
    EquationClass.FAST_RFDE: solve_fast_rfde,
    EquationClass.AVERAGED_RFDE: solve_averaged_rfde,
    EquationClass.AVERAGED_RFDE_SCALED: solve_averaged_rfde,
}


def solve(problem: ProblemSpec, cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Dispatch on the problem's equation class."""
    return _DISPATCH[problem.equation_class](problem, cfg)

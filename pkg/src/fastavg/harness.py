"""Epsilon sweeps, stroboscopic diagnostics and hypothesis spot checks."""
from __future__ import annotations

import csv
import io
import itertools
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .average import build_averaged_field
from .core import (DomainError, EquationClass, FieldKind, FieldSpec, HistorySegment,
                   ProblemSpec, Trajectory, trajectory_history)
from .integrate import BlowUpError, IntegratorConfig, solve

CSV_COLUMNS = ("epsilon", "sup_error", "ratio_prev", "blow_up", "wall_ms")
SCALED_COLUMN = "sup_error_scaled"


def sup_error(x: Trajectory, y: Trajectory, interval=None, n_samples: int = 1000) -> float:
    """Max Euclidean distance between two trajectories on a uniform grid.

    The grid is refined until its spacing is at most the smaller node
    spacing of the two trajectories.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    a, b = interval if interval is not None else (0.0, min(x.t_end, y.t_end))
    for tr, label in ((x, "x"), (y, "y")):
        if a < tr.t_start - 1e-12 or b > tr.t_end + 1e-12 * max(1.0, abs(b)):
            raise DomainError(f"trajectory {label} covers [{tr.t_start:g}, {tr.t_end:g}], "
                              f"not [{a:g}, {b:g}]")
    steps = [s for s in (x.h, y.h) if s > 0]
    n = n_samples
    if steps:
        n = max(n, math.ceil((b - a) / min(steps)) + 1)
    ts = np.linspace(a, b, n)
    return float(np.max(np.linalg.norm(x.query(ts) - y.query(ts), axis=1)))


@dataclass
class SweepRow:
    epsilon: float
    sup_error: float
    ratio_prev: Optional[float]
    blow_up: bool
    wall_ms: float
    sup_error_scaled: Optional[float] = None
    escape_time: Optional[float] = None


@dataclass
class SweepReport:
    rows: list
    metadata: dict = dc_field(default_factory=dict)

    @property
    def compare_scaled(self) -> bool:
        return any(r.sup_error_scaled is not None for r in self.rows)

    def epsilon_zero(self, delta: float) -> Optional[float]:
        """Largest tested eps such that every tested eps' <= eps has error < delta."""
        best = None
        for row in reversed(self.rows):  # increasing eps
            if row.blow_up or not row.sup_error < delta:
                break
            best = row.epsilon
        return best

    def to_csv(self, out=None) -> str:
        """Write the report; returns the text. ``out`` is a path or text stream."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = list(CSV_COLUMNS) + ([SCALED_COLUMN] if self.compare_scaled else [])
        w.writerow(cols)
        for r in self.rows:
            line = [_fmt(r.epsilon), _fmt(r.sup_error),
                    "" if r.ratio_prev is None else _fmt(r.ratio_prev),
                    "true" if r.blow_up else "false", f"{r.wall_ms:.3f}"]
            if self.compare_scaled:
                line.append("" if r.sup_error_scaled is None else _fmt(r.sup_error_scaled))
            w.writerow(line)
        text = buf.getvalue()
        if isinstance(out, str):
            with open(out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        elif out is not None:
            out.write(text)
        return text

    def table(self) -> str:
        head = f"{'epsilon':>12} {'sup_error':>12} {'ratio':>8} {'blow_up':>8}"
        if self.compare_scaled:
            head += f" {'err(scaled)':>12}"
        lines = [head]
        for r in self.rows:
            ratio = "-" if r.ratio_prev is None else f"{r.ratio_prev:.3f}"
            err = "escape@%.4g" % r.escape_time if r.blow_up else f"{r.sup_error:.4e}"
            line = f"{r.epsilon:>12.6g} {err:>12} {ratio:>8} {str(r.blow_up).lower():>8}"
            if self.compare_scaled:
                s = "-" if r.sup_error_scaled is None else f"{r.sup_error_scaled:.4e}"
                line += f" {s:>12}"
            lines.append(line)
        return "\n".join(lines)


def _fmt(v: float) -> str:
    return repr(float(v))


def default_mode(field: FieldSpec) -> str:
    return "periodic" if field.period is not None else "cesaro"


def averaged_problem(problem: ProblemSpec, mode: Optional[str] = None,
                     tol: Optional[float] = None, L: Optional[float] = None,
                     scaled_epsilon: Optional[float] = None, **options) -> ProblemSpec:
    """The averaged counterpart of an oscillatory problem.

    fast_ode -> averaged ODE; rfde_normal_form -> averaged ODE of the lifted
    field (or, with ``scaled_epsilon``, the delay-retaining scaled RFDE);
    fast_rfde -> averaged RFDE.
    """
    f = problem.field
    mode = mode or default_mode(f)
    L = problem.L if L is None else L
    cls = problem.equation_class
    if cls is EquationClass.FAST_ODE:
        F = build_averaged_field(f, mode, tol, **options)
        return ProblemSpec(EquationClass.AVERAGED_ODE, F, problem.initial, L)
    if cls is EquationClass.RFDE_NORMAL_FORM:
        if scaled_epsilon is not None:
            F = build_averaged_field(f, mode, tol, **options)
            return ProblemSpec(EquationClass.AVERAGED_RFDE_SCALED, F, problem.initial, L,
                               scaled_epsilon, problem.r)
        G = build_averaged_field(f, mode, tol, lift=True, r=problem.r or None, **options)
        return ProblemSpec(EquationClass.AVERAGED_ODE, G, problem.initial(0.0), L)
    if cls is EquationClass.FAST_RFDE:
        F = build_averaged_field(f, mode, tol, **options)
        return ProblemSpec(EquationClass.AVERAGED_RFDE, F, problem.initial, L, None, problem.r)
    raise ValueError(f"{cls.value} is already averaged")


def epsilon_sweep(problem: ProblemSpec, eps_list: Sequence[float], mode: Optional[str] = None,
                  L: Optional[float] = None, cfg: IntegratorConfig = IntegratorConfig(),
                  tol: Optional[float] = None, compare_scaled: bool = False,
                  averaged_h: float = 1e-2, n_samples: int = 1000, jobs: int = 1,
                  label: str = "", **options) -> SweepReport:
    """Solve the oscillatory problem for each eps and compare with its average.

    The averaged solution is computed once (on its own, coarser step
    ``averaged_h``); with ``compare_scaled`` the delay-retaining scaled
    averaged RFDE is also solved per eps for normal-form problems. A
    blow-up marks the row instead of aborting the sweep.
    """
    eps = [float(e) for e in eps_list]
    if len(eps) < 3:
        raise ValueError("eps_list needs at least 3 entries")
    if any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise ValueError("eps_list must be positive and strictly decreasing")
    if compare_scaled and problem.equation_class is not EquationClass.RFDE_NORMAL_FORM:
        raise ValueError("compare_scaled applies to rfde_normal_form problems")
    mode = mode or default_mode(problem.field)
    L = problem.L if L is None else float(L)
    base = ProblemSpec(problem.equation_class, problem.field, problem.initial, L,
                       eps[0], problem.r)
    avg_cfg = IntegratorConfig(averaged_h, cfg.blow_up_bound, cfg.max_nodes, cfg.history_samples)
    y = solve(averaged_problem(base, mode, tol, **options), avg_cfg)

    def run(e):
        start = time.perf_counter()
        row = SweepRow(e, math.inf, None, False, 0.0)
        try:
            x = solve(base.with_epsilon(e), cfg)
            row.sup_error = sup_error(x, y, (0.0, L), n_samples)
            if compare_scaled:
                z = solve(averaged_problem(base, mode, tol, scaled_epsilon=e, **options), cfg)
                row.sup_error_scaled = sup_error(x, z, (0.0, L), n_samples)
        except BlowUpError as exc:
            row.blow_up = True
            row.escape_time = exc.escape_time
        row.wall_ms = 1e3 * (time.perf_counter() - start)
        return row

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, eps))
    else:
        rows = [run(e) for e in eps]
    for prev, row in zip(rows, rows[1:]):
        if not (prev.blow_up or row.blow_up) and prev.sup_error > 0:
            row.ratio_prev = row.sup_error / prev.sup_error
    meta = {
        "problem": label or problem.field.name,
        "class": problem.equation_class.value,
        "L": L,
        "h": cfg.h,
        "averaged_h": averaged_h,
        "h_policy": "min(h, eps*T/20 or eps/10), delays resolved in whole steps",
        "mode": mode,
        "tol": tol,
    }
    return SweepReport(rows, meta)


def stroboscopic_residual(x: Trajectory, field_avg: FieldSpec, epsilon: float,
                          t_grid: Sequence[float], alpha: Optional[float] = None,
                          r: Optional[float] = None) -> list:
    """``|(x(t+a) - x(t))/a - F(x(t))|`` on ``t_grid`` with window ``a = sqrt(eps)``.

    For a pointwise-ODE ``field_avg`` (including a lifted G) F reads x(t);
    for delay or functional averaged fields it reads the history x_t over
    [-r, 0] (``r`` defaults to the field delay).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a = math.sqrt(epsilon) if alpha is None else float(alpha)
    if field_avg.kind is not FieldKind.POINTWISE_ODE:
        r = field_avg.delay if r is None else r
    out = []
    skipped = []
    for t in t_grid:
        t = float(t)
        if t + a > x.t_end + 1e-12 or t < x.t_start:
            skipped.append(t)
            continue
        xt = x.query(t)
        slope = (x.query(t + a) - xt) / a
        if field_avg.kind is FieldKind.POINTWISE_ODE:
            F = field_avg(t, xt)
        else:
            F = field_avg(t, trajectory_history(x, t, r, 1.0))
        out.append((t, float(np.linalg.norm(slope - F))))
    if skipped:
        warnings.warn(f"skipped {len(skipped)} grid point(s) within alpha={a:g} of t_end "
                      f"or outside the trajectory", RuntimeWarning, stacklevel=2)
    return out


class FieldRejectedError(ValueError):
    """The field produced NaN on the probed region."""


@dataclass(frozen=True)
class GuardReport:
    max_norm: float
    modulus: float
    grows_with_horizon: bool
    t_horizon: float
    n_arguments: int
    note: str = "evidence, not proof"


def _guard_arguments(field: FieldSpec, lo, hi, n_grid):
    """Grid arguments with their integer grid indices and per-index steps."""
    axes = [np.linspace(a, b, n_grid) for a, b in zip(lo, hi)]
    steps = [(b - a) / (n_grid - 1) if n_grid > 1 else 0.0 for a, b in zip(lo, hi)]
    index = list(itertools.product(range(n_grid), repeat=len(axes)))
    states = [np.array([ax[i] for ax, i in zip(axes, idx)]) for idx in index]
    if field.kind is FieldKind.POINTWISE_ODE:
        return states, index, steps
    r = field.delay if field.delay > 0 else 1.0
    args, idxs = [], []
    for (ia, xd), (ib, x) in itertools.product(zip(index, states), repeat=2):
        args.append(HistorySegment([-r, 0.0], np.stack([xd, x])))
        idxs.append(ib + ia)
    return args, idxs, steps + steps


def hypothesis_guard(field: FieldSpec, bound_box, t_horizon: float, n_grid: int = 5,
                     dt: float = 0.05) -> GuardReport:
    """Finite-horizon evidence for boundedness and uniform continuity.

    Samples ``|f|`` over a grid of the box times [0, t_horizon]. Reports
    the maximum (refined around the best sample), the largest difference
    quotient between neighbouring grid arguments taken over all sampled
    times, and whether the maximum keeps growing from half to full horizon.
    """
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in bound_box)
    if lo.size == 1 and field.dim > 1:
        lo, hi = np.full(field.dim, lo[0]), np.full(field.dim, hi[0])
    if lo.size != field.dim or np.any(hi < lo):
        raise ValueError("bound_box must be (lo, hi) with lo <= hi in each of d components")
    if not t_horizon > 0 or not np.isfinite(t_horizon):
        raise ValueError("t_horizon must be positive and finite")
    ts = np.linspace(0.0, t_horizon, max(2, math.ceil(t_horizon / dt) + 1))
    args, index, steps = _guard_arguments(field, lo, hi, n_grid)
    samples = []
    best = (-1.0, 0, 0)
    half = ts <= 0.5 * t_horizon
    half_max = 0.0
    for k, arg in enumerate(args):
        vals = field.sample(ts, arg)
        if np.any(np.isnan(vals)):
            raise FieldRejectedError("field is NaN on the probed region")
        norms = np.linalg.norm(vals, axis=1)
        j = int(np.argmax(norms))
        if norms[j] > best[0]:
            best = (float(norms[j]), k, j)
        half_max = max(half_max, float(norms[half].max()))
        samples.append(vals)
    max_norm, k, j = best
    a, b = ts[max(j - 1, 0)], ts[min(j + 1, ts.size - 1)]
    if b > a:
        res = minimize_scalar(lambda s: -np.linalg.norm(field(s, args[k])), bounds=(a, b),
                              method="bounded", options={"xatol": 1e-10})
        if np.isfinite(res.fun):
            max_norm = max(max_norm, float(-res.fun))
    modulus = 0.0
    position = {idx: k for k, idx in enumerate(index)}
    for k, idx in enumerate(index):
        for c, step in enumerate(steps):
            nb = position.get(idx[:c] + (idx[c] + 1,) + idx[c + 1:])
            if nb is None or step == 0:
                continue
            q = float(np.max(np.linalg.norm(samples[nb] - samples[k], axis=1))) / step
            modulus = max(modulus, q)
    grows = max_norm > 1.5 * half_max + 1e-12
    return GuardReport(float(max_norm), float(modulus), bool(grows), float(t_horizon), len(args))

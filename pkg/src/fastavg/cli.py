"""Command-line front end.

Usage::

    fastavg solve CONFIG [--epsilon E] [--L L] [--out PATH]
    fastavg average CONFIG
    fastavg sweep CONFIG [--jobs N]
    fastavg strobe CONFIG
    fastavg catalog

Exit codes: 0 ok, 1 config error, 2 blow-up, 3 no average, 4 internal.
"""
from __future__ import annotations

import argparse
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .average import (DEFAULT_PROBES, DEFAULT_TOL, AveragingError, average_almost_periodic,
                      average_cesaro, average_periodic, lift_constant_history)
from .core import EquationClass, FieldKind, HistorySegment, ProblemSpec
from .fields import catalog, expression_field, get_entry
from .fields.expr import HISTORY, ExprError, eval_expr, parse_field_expr
from .harness import averaged_problem, epsilon_sweep, stroboscopic_residual
from .integrate import BlowUpError, IntegratorConfig, effective_step, solve

log = logging.getLogger("fastavg")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOW_UP = 2
EXIT_NO_AVERAGE = 3
EXIT_INTERNAL = 4

SCHEMA = {
    "problem": ("class", "d", "epsilon", "r", "L", "field", "catalog", "x0", "phi", "period"),
    "integrator": ("h", "blow_up_bound", "max_nodes", "history_samples"),
    "average": ("mode", "tol", "T0", "T_max", "period", "n_quad", "probes", "x"),
    "sweep": ("eps", "compare_scaled", "averaged_h", "n_samples"),
    "strobe": ("points", "alpha"),
    "output": ("csv", "verbosity"),
}
MODES = ("periodic", "cesaro", "almost_periodic")
_ODE = (EquationClass.FAST_ODE, EquationClass.AVERAGED_ODE)
_OSCILLATORY = (EquationClass.FAST_ODE, EquationClass.RFDE_NORMAL_FORM, EquationClass.FAST_RFDE)


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, where: str = ""):
        self.line = line
        prefix = f"line {line}" if line is not None else (where or "config")
        super().__init__(f"{prefix}: {message}")


@dataclass
class Entry:
    value: str
    line: Optional[int]
    where: str = ""

    def error(self, message: str) -> ConfigError:
        return ConfigError(message, self.line, self.where)


@dataclass
class RunConfig:
    """Parsed config: section -> key -> Entry, plus header lines."""

    sections: dict = field(default_factory=dict)
    headers: dict = field(default_factory=dict)
    n_lines: int = 0

    def get(self, section: str, key: str) -> Optional[Entry]:
        return self.sections.get(section, {}).get(key)

    def set(self, section: str, key: str, value: str, where: str):
        self.sections.setdefault(section, {})[key] = Entry(value, None, where)

    def anchor(self, section: str) -> int:
        """Line to blame for a missing or inconsistent key in ``section``."""
        return self.headers.get(section, max(self.n_lines, 1))


def parse_config(text: str) -> RunConfig:
    """INI-like text: ``[section]`` headers, ``key = value`` lines, ``#`` comments."""
    cfg = RunConfig()
    lines = text.splitlines()
    cfg.n_lines = len(lines)
    current = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]; expected one of "
                                  + ", ".join(SCHEMA), lineno)
            if current in cfg.headers:
                raise ConfigError(f"duplicate section [{current}] (first at line "
                                  f"{cfg.headers[current]})", lineno)
            cfg.headers[current] = lineno
            cfg.sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key {key!r} in [{current}]; allowed: "
                              + ", ".join(SCHEMA[current]), lineno)
        if key in cfg.sections[current]:
            raise ConfigError(f"duplicate key {key!r} (first at line "
                              f"{cfg.sections[current][key].line})", lineno)
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1].strip()
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        cfg.sections[current][key] = Entry(value, lineno)
    return cfg


# ---- typed accessors -------------------------------------------------------

def _constant(entry: Entry, text: Optional[str] = None) -> float:
    text = entry.value if text is None else text
    try:
        value = float(text)
    except ValueError:
        try:
            ast = parse_field_expr(text, 1, HISTORY)
        except ExprError as exc:
            raise entry.error(f"not a number: {text!r} ({exc})") from None
        value = eval_expr(ast, theta=math.nan)
    if not math.isfinite(value):
        raise entry.error(f"not a finite constant: {text!r}")
    return value


def _number(cfg, section, key, default=None, *, positive=False, nonneg=False,
            minimum=None, integer=False):
    entry = cfg.get(section, key)
    if entry is None:
        return default
    v = _constant(entry)
    if positive and not v > 0:
        raise entry.error(f"{key} must be positive, got {v:g}")
    if nonneg and v < 0:
        raise entry.error(f"{key} must be nonnegative, got {v:g}")
    if integer:
        if v != int(v):
            raise entry.error(f"{key} must be an integer, got {v:g}")
        v = int(v)
    if minimum is not None and v < minimum:
        raise entry.error(f"{key} must be at least {minimum}, got {v:g}")
    return v


def _numbers(entry: Entry) -> list:
    parts = [p.strip() for p in entry.value.replace(";", ",").split(",")]
    if any(not p for p in parts):
        raise entry.error("empty list item")
    return [_constant(entry, p) for p in parts]


def _bool(entry: Optional[Entry], default=False) -> bool:
    if entry is None:
        return default
    v = entry.value.lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise entry.error(f"expected true or false, got {entry.value!r}")


def _choice(cfg, section, key, choices, default=None):
    entry = cfg.get(section, key)
    if entry is None:
        return default
    if entry.value not in choices:
        raise entry.error(f"{key} must be one of {', '.join(choices)}, got {entry.value!r}")
    return entry.value


# ---- validated run plan ------------------------------------------------------

@dataclass
class Plan:
    problem: ProblemSpec
    integrator: IntegratorConfig
    mode: str
    tol: Optional[float]
    options: dict
    x_avg: Optional[np.ndarray]
    eps_list: Optional[list]
    compare_scaled: bool
    averaged_h: float
    n_samples: int
    points: int
    alpha: Optional[float]
    csv: Optional[str]
    verbosity: int
    label: str
    cfg: RunConfig


def _problem(cfg: RunConfig, runs: bool):
    """ProblemSpec, declared period, default averaging mode and a label.

    ``runs`` is False for commands that never integrate (average), which
    then need neither L nor an initial condition.
    """
    anchor = cfg.anchor("problem")
    field_e, cat_e = cfg.get("problem", "field"), cfg.get("problem", "catalog")
    if "problem" not in cfg.sections:
        raise ConfigError("missing [problem] section", anchor)
    if (field_e is None) == (cat_e is None):
        raise ConfigError("[problem] needs exactly one of 'field' or 'catalog'", anchor)
    cls_name = _choice(cfg, "problem", "class", [c.value for c in EquationClass])
    entry = None
    if cat_e is not None:
        try:
            entry = get_entry(cat_e.value)
        except KeyError as exc:
            raise cat_e.error(str(exc.args[0])) from None
        base = entry.problem
        cls = EquationClass(cls_name) if cls_name else base.equation_class
        d = _number(cfg, "problem", "d", base.field.dim, integer=True, minimum=1)
        if d != base.field.dim:
            raise cfg.get("problem", "d").error(f"catalog entry {entry.name} has d = {base.field.dim}")
        r = _number(cfg, "problem", "r", base.r, nonneg=True)
        if base.field.kind is FieldKind.POINTWISE_DELAY and r != base.field.delay:
            raise cfg.get("problem", "r").error(
                f"catalog entry {entry.name} has a fixed delay r = {base.field.delay:g}")
        f = base.field
        period = _number(cfg, "problem", "period", entry.period, positive=True)
        default_mode = entry.averaged_mode
        label = entry.name
    else:
        cls = EquationClass(cls_name or "fast_ode")
        d = _number(cfg, "problem", "d", 1, integer=True, minimum=1)
        r = _number(cfg, "problem", "r", 0.0, nonneg=True)
        period = _number(cfg, "problem", "period", None, positive=True)
        kind = FieldKind.POINTWISE_ODE if cls in _ODE else FieldKind.POINTWISE_DELAY
        try:
            f = expression_field(field_e.value, d, kind, delay=r, period=period)
        except (ExprError, ValueError) as exc:
            raise field_e.error(f"bad field: {exc}") from None
        default_mode = None
        label = field_e.value
        base = None
    if cls not in _ODE and r <= 0:
        raise ConfigError(f"{cls.value} needs a positive delay r", anchor)
    eps_default = base.epsilon if base is not None else None
    if eps_default is None and cfg.get("sweep", "eps") is not None:
        eps_default = _numbers(cfg.get("sweep", "eps"))[0]
    if eps_default is None and (f.autonomous or not runs):
        eps_default = 1.0  # has no effect on the result
    eps = _number(cfg, "problem", "epsilon", eps_default, positive=True)
    L = _number(cfg, "problem", "L", base.L if base is not None else 1.0, positive=True)
    if runs or cfg.get("problem", "x0") or cfg.get("problem", "phi"):
        initial = _initial(cfg, cls, d, r, base)
    else:
        initial = np.zeros(d)
    try:
        problem = ProblemSpec(cls, f, initial, L, eps, 0.0 if cls in _ODE else r)
    except ValueError as exc:
        raise ConfigError(str(exc), anchor) from None
    return problem, period, default_mode, label


def _initial(cfg, cls, d, r, base):
    x0, phi = cfg.get("problem", "x0"), cfg.get("problem", "phi")
    if x0 is not None and phi is not None:
        raise phi.error("give either x0 or phi, not both")
    if phi is not None:
        if cls in _ODE:
            raise phi.error(f"phi (initial history) does not apply to {cls.value}")
        parts = [p.strip() for p in phi.value.split(";")]
        if len(parts) != d:
            raise phi.error(f"phi has {len(parts)} components, expected {d}")
        try:
            asts = [parse_field_expr(p, d, HISTORY) for p in parts]
        except ExprError as exc:
            raise phi.error(f"bad phi: {exc}") from None
        thetas = np.linspace(-r, 0.0, 33)
        values = np.stack([np.broadcast_to(eval_expr(a, theta=thetas), thetas.shape)
                           for a in asts], axis=1)
        if not np.all(np.isfinite(values)):
            raise phi.error("phi is not finite on [-r, 0]")
        return HistorySegment(thetas, values)
    if x0 is not None:
        values = _numbers(x0)
        if len(values) != d:
            raise x0.error(f"x0 has {len(values)} components, expected {d}")
        return np.array(values)
    if base is not None:
        init = base.initial
        if isinstance(init, HistorySegment) and cls in _ODE:
            return init(0.0)
        if not isinstance(init, HistorySegment) and cls not in _ODE:
            return HistorySegment.constant(init, r)
        return init
    raise ConfigError("missing x0 (or phi) in [problem]", cfg.anchor("problem"))


def _sweep_eps(cfg):
    entry = cfg.get("sweep", "eps")
    return _numbers(entry) if entry is not None else None


def build_plan(cfg: RunConfig, command: str = "solve") -> Plan:
    """Validate every key against the library preconditions before computing."""
    problem, period, default_mode, label = _problem(cfg, command != "average")
    d = problem.field.dim
    h = _number(cfg, "integrator", "h", 1e-3, positive=True)
    bound = _number(cfg, "integrator", "blow_up_bound", 1e8, positive=True)
    max_nodes = _number(cfg, "integrator", "max_nodes", 10_000_000, integer=True, minimum=2)
    samples = _number(cfg, "integrator", "history_samples", 33, integer=True, minimum=2)
    integrator = IntegratorConfig(h, bound, max_nodes, samples)
    if command != "average":
        eps_min = min(cfg_eps for cfg_eps in _sweep_eps(cfg) or [problem.epsilon or 1.0])
        probe = problem if problem.epsilon is None else problem.with_epsilon(eps_min)
        nodes = problem.L / effective_step(probe, integrator) + 1
        if nodes > max_nodes:
            raise ConfigError(f"about {nodes:.3g} nodes needed but max_nodes = {max_nodes}",
                              cfg.anchor("integrator"))

    avg_period = _number(cfg, "average", "period", period, positive=True)
    mode = _choice(cfg, "average", "mode", MODES,
                   default_mode or ("periodic" if avg_period else "cesaro"))
    if mode == "periodic" and avg_period is None:
        raise ConfigError("periodic mode needs a period ([average] or [problem] period)",
                          cfg.anchor("average"))
    tol = _number(cfg, "average", "tol", None, positive=True)
    T0 = _number(cfg, "average", "T0", 1.0, minimum=1.0)
    T_max = _number(cfg, "average", "T_max", 1e6, positive=True)
    if T_max < 4 * T0:
        raise ConfigError(f"T_max must be at least 4*T0 = {4 * T0:g}", cfg.anchor("average"))
    options = {"T0": T0, "T_max": T_max}
    if avg_period is not None:
        options["period"] = avg_period
    n_quad = _number(cfg, "average", "n_quad", None, integer=True, minimum=16)
    if n_quad is not None:
        if n_quad % 2:
            raise cfg.get("average", "n_quad").error("n_quad must be even")
        options["n_quad"] = n_quad
    probes = cfg.get("average", "probes")
    options["s_probes"] = tuple(_numbers(probes)) if probes else DEFAULT_PROBES
    x_e = cfg.get("average", "x")
    x_avg = None
    if x_e is not None:
        x_avg = np.array(_numbers(x_e))
        if x_avg.size != d:
            raise x_e.error(f"x has {x_avg.size} components, expected {d}")

    eps_e = cfg.get("sweep", "eps")
    eps_list = None
    if eps_e is not None:
        eps_list = _numbers(eps_e)
        if len(eps_list) < 3:
            raise eps_e.error("eps needs at least 3 values")
        if eps_list[-1] <= 0 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
            raise eps_e.error("eps values must be positive and strictly decreasing")
    compare_scaled = _bool(cfg.get("sweep", "compare_scaled"))
    if compare_scaled and problem.equation_class is not EquationClass.RFDE_NORMAL_FORM:
        raise cfg.get("sweep", "compare_scaled").error(
            "compare_scaled applies to rfde_normal_form problems")
    averaged_h = _number(cfg, "sweep", "averaged_h", 1e-2, positive=True)
    n_samples = _number(cfg, "sweep", "n_samples", 1000, integer=True, minimum=1000)
    points = _number(cfg, "strobe", "points", 20, integer=True, minimum=1)
    alpha = _number(cfg, "strobe", "alpha", None, positive=True)
    csv_e = cfg.get("output", "csv")
    verbosity = _number(cfg, "output", "verbosity", 1, integer=True, minimum=0)
    return Plan(problem, integrator, mode, tol, options, x_avg, eps_list, compare_scaled,
                averaged_h, n_samples, points, alpha, csv_e.value if csv_e else None,
                verbosity, label, cfg)


# ---- commands --------------------------------------------------------------

def _write(text: str, path: Optional[str], stdout):
    if path is None or path == "-":
        stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", path)


def _reject(plan: Plan, section: str, message: str):
    raise ConfigError(message, plan.cfg.anchor(section))


def trajectory_csv(traj) -> str:
    t, x, _ = traj.nodes
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"x{i + 1}" for i in range(x.shape[1])]) + "\n")
    for ti, xi in zip(t, x):
        buf.write(",".join(repr(float(v)) for v in (ti, *xi)) + "\n")
    return buf.getvalue()


def cmd_solve(plan: Plan, stdout) -> int:
    p = plan.problem
    traj = solve(p, plan.integrator)
    log.info("solved %s on [0, %g] with %d nodes (h = %g)",
             p.equation_class.value, p.L, traj.nodes[0].size, traj.h)
    _write(trajectory_csv(traj), plan.csv, stdout)
    return EXIT_OK


def cmd_average(plan: Plan, stdout) -> int:
    f = plan.problem.field
    x = np.zeros(f.dim) if plan.x_avg is None else plan.x_avg
    arg = x if f.kind is FieldKind.POINTWISE_ODE else lift_constant_history(x, plan.problem.r)
    o = plan.options
    if plan.mode == "periodic":
        est = average_periodic(f, arg, o["period"], o.get("n_quad"))
    elif plan.mode == "cesaro":
        est = average_cesaro(f, arg, plan.tol or DEFAULT_TOL["cesaro"], o["T0"], o["T_max"])
    else:
        est = average_almost_periodic(f, arg, plan.tol or DEFAULT_TOL["almost_periodic"],
                                      o["s_probes"],
                                      o["T0"], o["T_max"])
    lines = [
        "value = " + ", ".join(repr(float(v)) for v in est.value),
        f"horizon_T = {est.horizon_T!r}",
        f"residual = {est.residual!r}",
        f"mode = {est.mode}",
    ]
    _write("\n".join(lines) + "\n", plan.csv, stdout)
    return EXIT_OK


def cmd_sweep(plan: Plan, stdout, jobs: int, stderr=None) -> int:
    if plan.eps_list is None:
        _reject(plan, "sweep", "sweep needs [sweep] eps")
    p = plan.problem
    if p.equation_class not in _OSCILLATORY:
        _reject(plan, "problem", f"cannot sweep {p.equation_class.value}: already averaged")
    report = epsilon_sweep(p.with_epsilon(plan.eps_list[0]), plan.eps_list, plan.mode, None,
                           plan.integrator, plan.tol, plan.compare_scaled, plan.averaged_h,
                           plan.n_samples, jobs, plan.label, **plan.options)
    _write(report.to_csv(), plan.csv, stdout)
    table = report.table()
    if plan.csv is None or plan.csv == "-":
        if plan.verbosity > 0:
            (stderr or sys.stderr).write(table + "\n")
    else:
        stdout.write(table + "\n")
    return EXIT_OK


def cmd_strobe(plan: Plan, stdout) -> int:
    p = plan.problem
    if p.equation_class not in _OSCILLATORY:
        _reject(plan, "problem", f"strobe needs an oscillatory class, not {p.equation_class.value}")
    alpha = plan.alpha if plan.alpha is not None else math.sqrt(p.epsilon)
    if alpha >= p.L:
        _reject(plan, "strobe", f"alpha = {alpha:g} must be smaller than L = {p.L:g}")
    traj = solve(p, plan.integrator)
    avg = averaged_problem(p, plan.mode, plan.tol, **plan.options)
    grid = np.linspace(0.0, p.L - alpha, plan.points)
    rows = stroboscopic_residual(traj, avg.field, p.epsilon, grid, alpha, p.r or None)
    text = "t,residual\n" + "".join(f"{t!r},{res!r}\n" for t, res in rows)
    _write(text, plan.csv, stdout)
    return EXIT_OK


def cmd_catalog(stdout) -> int:
    rows = [("name", "class", "d", "period", "field")]
    for e in catalog():
        period = "-" if e.period is None else f"{e.period:.6g}"
        rows.append((e.name, e.problem.equation_class.value, str(e.field.dim), period,
                     "; ".join(e.expressions)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        stdout.write("  ".join(c.ljust(w) for c, w in zip(r, widths)) + "  " + r[4] + "\n")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fastavg", description="Averaging of fast-oscillating "
                                 "ODEs and retarded functional differential equations.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "integrate the configured problem, write t,x1..xd CSV"),
                        ("average", "estimate the averaged field at [average] x"),
                        ("sweep", "epsilon sweep against the averaged solution"),
                        ("strobe", "stroboscopic residual along the solution")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="config file ('-' for stdin)")
        p.add_argument("--epsilon", help="override [problem] epsilon")
        p.add_argument("--L", dest="L", help="override [problem] L")
        p.add_argument("--out", help="override [output] csv")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                           help="parallel solves (default: number of cores)")
    sub.add_parser("catalog", help="list built-in test problems")
    return ap


def load_config(args, stdin) -> RunConfig:
    if args.config == "-":
        text = stdin.read()
    else:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", None, args.config) from None
        except UnicodeDecodeError:
            raise ConfigError("config is not valid UTF-8", None, args.config) from None
    cfg = parse_config(text)
    if args.epsilon is not None:
        cfg.set("problem", "epsilon", args.epsilon, "--epsilon")
    if args.L is not None:
        cfg.set("problem", "L", args.L, "--L")
    if args.out is not None:
        cfg.set("output", "csv", args.out, "--out")
    return cfg


def main(argv=None, stdout=None, stderr=None, stdin=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = _parser().parse_args(argv)
    if args.command == "catalog":
        return cmd_catalog(stdout)
    try:
        plan = build_plan(load_config(args, stdin or sys.stdin), args.command)
        handler = logging.StreamHandler(stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.handlers[:] = [handler]
        log.setLevel({0: logging.WARNING, 1: logging.INFO}.get(plan.verbosity, logging.DEBUG))
        if args.command == "solve":
            return cmd_solve(plan, stdout)
        if args.command == "average":
            return cmd_average(plan, stdout)
        if args.command == "sweep":
            return cmd_sweep(plan, stdout, max(1, args.jobs), stderr)
        return cmd_strobe(plan, stdout)
    except ConfigError as exc:
        stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except BlowUpError as exc:
        stderr.write(f"blow-up: solution left the bound at t = {exc.escape_time!r} "
                     f"(escape_time={exc.escape_time!r})\n")
        return EXIT_BLOW_UP
    except AveragingError as exc:
        stderr.write(f"no average: {exc}\n")
        return EXIT_NO_AVERAGE
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers everything else
        stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

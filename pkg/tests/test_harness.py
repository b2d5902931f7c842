import csv
import io
import math

import numpy as np
import pytest

import oracles
from fastavg.core import DomainError, FieldKind, FieldSpec, ProblemSpec, Trajectory
from fastavg.fields import catalog, expression_field, get_entry
from fastavg.harness import (CSV_COLUMNS, FieldRejectedError, SweepReport, SweepRow,
                             averaged_problem, epsilon_sweep, hypothesis_guard,
                             stroboscopic_residual, sup_error)
from fastavg.integrate import IntegratorConfig, solve

DEFAULT_SWEEP = (0.1, 0.05, 0.025, 0.0125, 0.00625)
# quasi-periodic-ode has error ~3.4 eps, so delta = 0.02 needs one more halving
EXTENDED_SWEEP = DEFAULT_SWEEP + (0.003125,)


def line(t, offset=0.0):
    return Trajectory(t, t + offset, np.ones_like(t))


class TestSupError:
    def test_identical(self):
        t = np.linspace(0, 1, 11)
        assert sup_error(line(t), line(t)) == 0.0

    def test_constant_offset(self):
        t = np.linspace(0, 1, 11)
        assert sup_error(line(t), line(t, 0.3)) == pytest.approx(0.3, abs=1e-14)

    def test_closed_form_law(self):
        e = get_entry("linear-osc-ode")
        x = solve(e.problem.with_epsilon(0.01))
        y = solve(averaged_problem(e.problem))
        assert sup_error(x, y) == pytest.approx(0.0136, rel=0.3)
        assert sup_error(x, y) == pytest.approx(oracles.LINEAR_OSC_ERROR_LAW[0.01], rel=0.01)

    def test_domain_and_samples(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(DomainError):
            sup_error(line(t), line(t), (0.0, 2.0))
        with pytest.raises(ValueError):
            sup_error(line(t), line(t), n_samples=999)


class TestSweep:
    def test_zero_field(self):
        zero = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, x: 0 * x, period=1.0)
        rep = epsilon_sweep(ProblemSpec("fast_ode", zero, [1.0], 1.0, 0.1), (0.1, 0.05, 0.02))
        assert [r.sup_error for r in rep.rows] == [0.0, 0.0, 0.0]
        assert all(r.ratio_prev is None for r in rep.rows)

    def test_linear_oscillator_rate(self):
        rep = epsilon_sweep(get_entry("linear-osc-ode").problem, (0.1, 0.05, 0.025, 0.0125))
        for r in rep.rows:
            assert r.sup_error == pytest.approx(oracles.LINEAR_OSC_ERROR_LAW[r.epsilon], rel=0.3)
        for r in rep.rows[1:]:
            assert 0.4 <= r.ratio_prev <= 0.6
        assert rep.rows[-1].sup_error == pytest.approx(0.017, abs=0.002)

    def test_delay_fast_rfde(self):
        rep = epsilon_sweep(get_entry("delay-fast-rfde").problem, (0.1, 0.01, 0.001))
        errs = [r.sup_error for r in rep.rows]
        assert errs[0] > errs[1] > errs[2] and errs[2] <= 0.02

    def test_eps_list_validation(self):
        p = get_entry("linear-osc-ode").problem
        for bad in [(0.1, 0.05), (0.1, 0.1, 0.05), (0.1, 0.05, 0.0), (0.05, 0.1, 0.01)]:
            with pytest.raises(ValueError):
                epsilon_sweep(p, bad)
        with pytest.raises(ValueError):
            epsilon_sweep(p, (0.1, 0.05, 0.01), compare_scaled=True)

    def test_blow_up_rows_recorded(self):
        # x' = (1 + 5 sin(t/eps)) x^2 from 0.5 escapes before t = 1 only for large eps
        f = expression_field("(1 + 5*sin(t)) * x1^2", period=2 * math.pi)
        p = ProblemSpec("fast_ode", f, [0.5], 1.0, 1.0)
        rep = epsilon_sweep(p, (1.0, 0.05, 0.01), cfg=IntegratorConfig(blow_up_bound=1e3))
        assert rep.rows[0].blow_up and math.isinf(rep.rows[0].sup_error)
        assert rep.rows[0].escape_time is not None and rep.rows[0].escape_time < 1.0
        assert not rep.rows[2].blow_up
        assert rep.rows[1].ratio_prev is None
        text = rep.to_csv()
        assert text.splitlines()[1].split(",")[3] == "true"

    def test_deterministic_and_parallel(self):
        p = get_entry("linear-osc-ode").problem
        a = epsilon_sweep(p, (0.1, 0.05, 0.025))
        b = epsilon_sweep(p, (0.1, 0.05, 0.025), jobs=3)
        strip = lambda rep: [(r.epsilon, r.sup_error, r.ratio_prev, r.blow_up) for r in rep.rows]
        assert strip(a) == strip(b)

    def test_csv_format(self):
        rows = [SweepRow(0.1, 0.5, None, False, 1.25), SweepRow(0.05, 0.25, 0.5, False, 2.0)]
        text = SweepReport(rows).to_csv()
        assert text.startswith(",".join(CSV_COLUMNS) + "\n")
        assert "\r" not in text and text.endswith("\n")
        parsed = list(csv.DictReader(io.StringIO(text)))
        assert parsed[0]["ratio_prev"] == "" and float(parsed[1]["ratio_prev"]) == 0.5
        assert parsed[1]["blow_up"] == "false"

    def test_epsilon_zero(self):
        rows = [SweepRow(0.1, 0.3, None, False, 0), SweepRow(0.05, 0.08, None, False, 0),
                SweepRow(0.01, 0.01, None, False, 0)]
        rep = SweepReport(rows)
        assert rep.epsilon_zero(0.1) == 0.05
        assert rep.epsilon_zero(0.02) == 0.01
        assert rep.epsilon_zero(0.001) is None


@pytest.fixture(scope="module")
def default_sweeps():
    out = {}
    for e in catalog():
        mode = e.averaged_mode
        tol = 1e-2 if mode == "almost_periodic" else None
        out[e.name] = epsilon_sweep(e.problem, EXTENDED_SWEEP, mode=mode, tol=tol, jobs=2)
    return out


@pytest.mark.parametrize("name", [e.name for e in catalog()])
def test_default_sweep_shrinks(default_sweeps, name):
    errs = [r.sup_error for r in default_sweeps[name].rows[:len(DEFAULT_SWEEP)]]
    assert errs[-1] < errs[0] / 4
    assert errs[-3] > errs[-2] > errs[-1]


@pytest.mark.parametrize("name", [e.name for e in catalog()])
@pytest.mark.parametrize("delta", [0.1, 0.02])
def test_epsilon_zero_exists(default_sweeps, name, delta):
    rep = default_sweeps[name]
    eps0 = rep.epsilon_zero(delta)
    assert eps0 is not None
    assert all(r.sup_error < delta for r in rep.rows if r.epsilon <= eps0)


def test_scaled_average_closer_for_normal_form():
    e = get_entry("delay-normal-form")
    rep = epsilon_sweep(e.problem, (0.1, 0.05, 0.01), compare_scaled=True)
    for r in rep.rows:
        assert r.sup_error_scaled <= r.sup_error
    assert rep.to_csv().splitlines()[0].endswith(",sup_error_scaled")


class TestStroboscopic:
    def test_averaged_decay(self):
        F = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, y: -y)
        y = solve(ProblemSpec("averaged_ode", F, [1.0], 1.0))
        eps = 1e-4
        res = stroboscopic_residual(y, F, eps, np.linspace(0, 0.9, 10))
        assert max(r for _, r in res) <= 10 * math.sqrt(eps)

    def test_constant_trajectory(self):
        t = np.linspace(0, 1, 11)
        x = Trajectory(t, np.full(11, 2.0), np.zeros(11))
        F = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, y: 0 * y)
        res = stroboscopic_residual(x, F, 0.01, np.linspace(0, 0.8, 5))
        assert [r for _, r in res] == [0.0] * 5

    def test_linear_oscillator(self):
        e = get_entry("linear-osc-ode")
        p = e.problem.with_epsilon(1e-4)
        x = solve(p)
        F = averaged_problem(p).field
        res = stroboscopic_residual(x, F, 1e-4, np.linspace(0, 0.99, 20), alpha=0.01)
        assert len(res) == 20 and max(r for _, r in res) <= 0.05

    def test_points_past_end_skipped(self):
        t = np.linspace(0, 1, 11)
        x = Trajectory(t, np.full(11, 2.0), np.zeros(11))
        F = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, y: 0 * y)
        with pytest.warns(RuntimeWarning, match="skipped 1"):
            res = stroboscopic_residual(x, F, 0.01, [0.5, 0.95])
        assert len(res) == 1


class TestHypothesisGuard:
    def test_sine_times_state(self):
        f = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, x: np.sin(t) * x)
        rep = hypothesis_guard(f, (-2.0, 2.0), 100.0)
        assert rep.max_norm == pytest.approx(2.0, abs=1e-6)
        assert not rep.grows_with_horizon
        assert rep.note == "evidence, not proof"

    def test_zero(self):
        f = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, x: 0 * x)
        rep = hypothesis_guard(f, (-1.0, 1.0), 10.0)
        assert rep.max_norm == 0.0 and rep.modulus == 0.0

    def test_growing_in_time(self):
        f = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, x: t * x)
        short = hypothesis_guard(f, (-1.0, 1.0), 10.0)
        long = hypothesis_guard(f, (-1.0, 1.0), 100.0)
        assert long.max_norm > short.max_norm
        assert long.grows_with_horizon

    def test_delay_field(self):
        f = get_entry("delay-fast-rfde").field
        rep = hypothesis_guard(f, (-1.0, 1.0), 10.0, n_grid=3)
        assert rep.max_norm == pytest.approx(2.0, abs=1e-6)
        assert rep.n_arguments == 9

    def test_nan_rejected(self):
        f = expression_field("x1 / (x1 - x1)")
        with pytest.raises(FieldRejectedError):
            hypothesis_guard(f, (-1.0, 1.0), 1.0)

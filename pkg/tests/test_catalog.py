import math

import numpy as np
import pytest

import oracles
from fastavg.core import EquationClass
from fastavg.fields import catalog, get_entry
from fastavg.fields.builtin import _self_check, delayed_exponential_reference
from fastavg.integrate import solve

NAMES = ["linear-osc-ode", "damped-forced-ode", "quasi-periodic-ode", "delay-normal-form",
         "delay-fast-rfde"]


def test_names_are_stable():
    assert [e.name for e in catalog()] == NAMES


def test_unknown_name():
    with pytest.raises(KeyError, match="available: linear-osc-ode"):
        get_entry("van-der-pol")


@pytest.mark.parametrize("name", NAMES)
def test_closed_forms_satisfy_equations(name):
    assert _self_check(get_entry(name)) < 1e-8


def test_references_match_independent_oracles():
    ts = np.linspace(0, 2, 401)
    e = get_entry("linear-osc-ode")
    np.testing.assert_allclose(e.reference(ts, 0.03)[:, 0], oracles.linear_osc(ts, 0.03),
                               rtol=1e-14)
    e = get_entry("damped-forced-ode")
    np.testing.assert_allclose(e.reference(ts, 0.03)[:, 0], oracles.damped_forced(ts, 0.03),
                               atol=1e-13)
    ts = np.linspace(-1, 5, 601)
    np.testing.assert_allclose(delayed_exponential_reference(ts)[:, 0],
                               oracles.unit_delay_decay(ts), atol=1e-12)


@pytest.mark.parametrize("name", ["linear-osc-ode", "damped-forced-ode", "quasi-periodic-ode"])
def test_solutions_match_closed_forms(name):
    e = get_entry(name)
    p = e.problem.with_epsilon(0.05)
    tr = solve(p)
    ts = np.linspace(0, p.L, 501)
    np.testing.assert_allclose(tr.query(ts), e.reference(ts, 0.05), atol=1e-7)


def test_entry_metadata():
    for e in catalog():
        assert e.description
        assert len(e.expressions) == e.field.dim
        assert e.averaged_reference is not None
        if e.problem.equation_class is not EquationClass.FAST_ODE:
            assert e.problem.r == 1.0
    assert get_entry("quasi-periodic-ode").averaged_mode == "almost_periodic"
    assert get_entry("linear-osc-ode").period == math.pi

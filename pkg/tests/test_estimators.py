import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

import oracles
from fastavg import AveragingSolver, FieldAverager, expression_field, get_entry
from fastavg.core import HistorySegment
from fastavg.validation import check_initial, check_positive, check_states, check_times

SIN2_X = expression_field("sin(t)^2 * x1", period=math.pi)


class TestFieldAverager:
    def test_transform_periodic(self):
        avg = FieldAverager(SIN2_X).fit()
        out = avg.transform([[2.0], [-1.0], [0.0]])
        np.testing.assert_allclose(out, [[1.0], [-0.5], [0.0]], atol=1e-10)
        assert avg.mode_ == "periodic" and avg.n_features_in_ == 1

    def test_estimate(self):
        est = FieldAverager(SIN2_X).fit().estimate([2.0])
        assert est.mode == "periodic" and est.value[0] == pytest.approx(1.0, abs=1e-10)

    def test_cesaro_without_period(self):
        f = expression_field("sin(t)^2 * x1")
        avg = FieldAverager(f, tol=1e-3).fit()
        assert avg.mode_ == "cesaro"
        assert avg.transform([[2.0]])[0, 0] == pytest.approx(1.0, abs=2e-3)

    def test_almost_periodic(self):
        est = FieldAverager(get_entry("quasi-periodic-ode").field, mode="almost_periodic",
                            tol=1e-2).fit().estimate([0.3])
        assert abs(est.value[0]) <= 1e-2 and est.residual <= 2e-2

    def test_delay_columns(self):
        f = get_entry("delay-fast-rfde").field
        avg = FieldAverager(f).fit()
        assert avg.n_features_in_ == 2
        # mean of -(1 - cos 2t) xd over a period is -xd
        np.testing.assert_allclose(avg.transform([[5.0, 2.0]]), [[-2.0]], atol=1e-10)
        lifted = FieldAverager(f, lift=True, r=1.0).fit()
        assert lifted.n_features_in_ == 1
        np.testing.assert_allclose(lifted.transform([[3.0]]), [[-3.0]], atol=1e-10)
        assert lifted.estimate([3.0]).value[0] == pytest.approx(-3.0, abs=1e-10)

    def test_clone_and_params(self):
        avg = FieldAverager(SIN2_X, tol=1e-4)
        c = clone(avg)
        assert c.get_params()["tol"] == 1e-4 and c.field == SIN2_X
        c.set_params(mode="cesaro")
        assert c.fit().mode_ == "cesaro"

    def test_pipeline(self):
        pipe = make_pipeline(FunctionTransformer(lambda X: 2 * X), FieldAverager(SIN2_X))
        np.testing.assert_allclose(pipe.fit_transform(np.array([[1.0]])), [[1.0]], atol=1e-10)

    def test_errors(self):
        with pytest.raises(NotFittedError):
            FieldAverager(SIN2_X).transform([[1.0]])
        with pytest.raises(TypeError):
            FieldAverager(lambda t, x: x).fit()
        with pytest.raises(ValueError):
            FieldAverager(SIN2_X).fit().transform([[1.0, 2.0]])
        with pytest.raises(ValueError):
            FieldAverager(SIN2_X).fit().transform([[np.nan]])


class TestAveragingSolver:
    def test_linear_oscillator(self):
        e = get_entry("linear-osc-ode")
        s = AveragingSolver(e.field, epsilon=0.1, L=1.0, h=1e-3).fit([1.0])
        assert s.predict([1.0])[0, 0] == pytest.approx(oracles.LINEAR_OSC_X1_EPS_0_1, rel=1e-7)
        ts = np.linspace(0, 1, 21)
        assert s.score(ts, oracles.linear_osc(ts, 0.1)[:, None]) > -1e-7

    def test_averaged(self):
        e = get_entry("linear-osc-ode")
        s = AveragingSolver(e.field, epsilon=0.1, averaged=True).fit([1.0])
        assert s.problem_.equation_class.value == "averaged_ode"
        assert s.predict([1.0])[0, 0] == pytest.approx(math.e, rel=1e-9)

    def test_clone_sweep(self):
        e = get_entry("linear-osc-ode")
        base = AveragingSolver(e.field, L=1.0)
        y = AveragingSolver(e.field, averaged=True).fit([1.0])
        ts = np.linspace(0, 1, 401)
        errs = [-clone(base).set_params(epsilon=eps).fit([1.0]).score(ts, y.predict(ts))
                for eps in (0.1, 0.05, 0.025)]
        assert errs[0] > errs[1] > errs[2]
        for eps, err in zip((0.1, 0.05, 0.025), errs):
            assert err == pytest.approx(oracles.LINEAR_OSC_ERROR_LAW[eps], rel=0.05)

    def test_delay_fast_rfde(self):
        e = get_entry("delay-fast-rfde")
        s = AveragingSolver(e.field, "fast_rfde", epsilon=0.001, r=1.0, L=2.0).fit([1.0])
        assert isinstance(s.problem_.initial, HistorySegment)
        x1, x2 = s.predict([1.0, 2.0])[:, 0]
        assert abs(x1) <= 0.02 and abs(x2 + 0.5) <= 0.02

    def test_normal_form_averaged_is_ode(self):
        e = get_entry("delay-normal-form")
        s = AveragingSolver(e.field, "rfde_normal_form", epsilon=0.01, r=1.0,
                            averaged=True).fit([1.0])
        assert s.problem_.equation_class.value == "averaged_ode"
        assert s.predict([1.0])[0, 0] == pytest.approx(math.exp(-1), rel=1e-6)

    def test_validation(self):
        f = get_entry("linear-osc-ode").field
        for bad in ({"epsilon": 0.0}, {"L": -1.0}, {"h": float("nan")}, {"r": -1.0},
                    {"equation_class": "slow_ode"}):
            with pytest.raises(ValueError):
                AveragingSolver(f, **bad).fit([1.0])
        with pytest.raises(ValueError):
            AveragingSolver(f).fit([1.0, 2.0])
        with pytest.raises(NotFittedError):
            AveragingSolver(f).predict([0.5])


class TestValidation:
    def test_check_states(self):
        assert check_states([1.0, 2.0]).shape == (2, 1)
        assert check_states([1.0, 2.0], 2).shape == (1, 2)
        with pytest.raises(ValueError):
            check_states([[1.0, np.inf]])

    def test_check_times(self):
        with pytest.raises(ValueError):
            check_times([])
        with pytest.raises(ValueError):
            check_times([0.0, np.nan])

    def test_check_positive(self):
        assert check_positive(2, "x") == 2.0
        for bad in (0, -1.0, float("inf"), "1"):
            with pytest.raises(ValueError):
                check_positive(bad, "x")

    def test_check_initial(self):
        seg = HistorySegment.constant([1.0], 1.0)
        assert check_initial(seg, 1, 1.0) is seg
        with pytest.raises(ValueError):
            check_initial(seg, 2, 1.0)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastavg.core import (DomainError, EquationClass, FieldKind, FieldSpec, HistorySegment,
                          ProblemSpec, Trajectory, as_state, hermite, trajectory_history)


def identity_trajectory(t0, t1, n=301):
    t = np.linspace(0.0, t1, n)
    prefix = HistorySegment.from_function(lambda th: th, -t0, dphi=lambda th: 1.0)
    return Trajectory(t, t, np.ones_like(t), prefix)


class TestHistorySegment:
    def test_constant_segment(self):
        seg = HistorySegment.constant([2.5, -1.0], r=1.5)
        for th in (-1.5, -0.7, 0.0):
            np.testing.assert_array_equal(seg(th), [2.5, -1.0])

    def test_linear_function_reproduced(self):
        seg = HistorySegment.from_function(lambda th: th, 1.0)
        assert seg(-0.5)[0] == pytest.approx(-0.5, abs=1e-15)

    def test_sine_with_hermite(self):
        seg = HistorySegment.from_function(np.sin, 1.0, dphi=np.cos, n_samples=21)
        assert not seg.is_linear
        assert abs(seg(-0.37)[0] - math.sin(-0.37)) < 1e-6

    def test_linear_fallback_flagged(self):
        assert HistorySegment.from_function(np.sin, 1.0).is_linear
        assert not HistorySegment.constant([1.0], 1.0).is_linear

    def test_degenerate_segment(self):
        seg = HistorySegment.constant([1.0, 2.0], r=0.0)
        assert seg.r == 0.0
        np.testing.assert_array_equal(seg(0.0), [1.0, 2.0])
        with pytest.raises(DomainError):
            seg(-0.1)

    def test_outside_domain(self):
        seg = HistorySegment.constant([1.0], 1.0)
        with pytest.raises(DomainError):
            seg(-1.5)
        with pytest.raises(DomainError):
            seg(0.1)

    def test_vector_query_shape(self):
        seg = HistorySegment.constant([1.0, 2.0], 1.0)
        assert seg(np.linspace(-1, 0, 7)).shape == (7, 2)

    def test_rejects_bad_samples(self):
        with pytest.raises(ValueError):
            HistorySegment([-1.0, -0.5], [1.0, 2.0])
        with pytest.raises(ValueError):
            HistorySegment([-1.0, 0.0], [1.0, np.nan])
        with pytest.raises(ValueError):
            HistorySegment([0.0, -1.0], [1.0, 1.0])

    def test_key_is_bit_pattern(self):
        a = HistorySegment.constant([1.0], 1.0)
        b = HistorySegment.constant([1.0], 1.0)
        c = HistorySegment.constant([np.nextafter(1.0, 2.0)], 1.0)
        assert a.key() == b.key() != c.key()

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3))
    def test_sup_norm_dominates_endpoint(self, a, b, r):
        seg = HistorySegment.from_function(lambda th: a + b * th, r)
        assert seg.sup_norm() >= abs(seg(0.0)[0]) - 1e-12


class TestHermite:
    def test_cubic_reproduced_exactly(self):
        p = lambda t: t ** 3 - 2 * t
        dp = lambda t: 3 * t ** 2 - 2
        tq = np.linspace(-0.4, 1.3, 50)
        t0, t1 = np.full(50, -0.4), np.full(50, 1.3)
        col = lambda g, t: g(t)[:, None]
        vals, ders = hermite(tq, t0, t1, col(p, t0), col(p, t1), col(dp, t0), col(dp, t1))
        np.testing.assert_allclose(vals[:, 0], p(tq), atol=1e-13)
        np.testing.assert_allclose(ders[:, 0], dp(tq), atol=1e-12)

    def test_trajectory_cubic(self):
        t = np.linspace(0.0, 2.0, 9)
        traj = Trajectory(t, t ** 3 - 2 * t, 3 * t ** 2 - 2)
        tq = np.linspace(0.0, 2.0, 101)
        np.testing.assert_allclose(traj.query(tq)[:, 0], tq ** 3 - 2 * tq, atol=1e-12)


class TestTrajectoryHistory:
    def test_constant_trajectory(self):
        t = np.linspace(0, 2, 11)
        traj = Trajectory(t, np.full(11, 3.0), np.zeros(11))
        seg = trajectory_history(traj, 1.5, 1.0)
        np.testing.assert_allclose(seg(np.linspace(-1, 0, 9))[:, 0], 3.0)

    def test_identity_window(self):
        traj = identity_trajectory(-1.0, 2.0)
        seg = trajectory_history(traj, 1.0, 1.0)
        th = np.linspace(-1, 0, 13)
        np.testing.assert_allclose(seg(th)[:, 0], 1.0 + th, atol=1e-13)

    def test_identity_window_reaches_prefix(self):
        traj = identity_trajectory(-1.0, 2.0)
        seg = trajectory_history(traj, 0.25, 1.0)
        th = np.linspace(-1, 0, 13)
        np.testing.assert_allclose(seg(th)[:, 0], 0.25 + th, atol=1e-13)

    def test_scaled_window(self):
        traj = identity_trajectory(-0.1, 2.0)
        seg = trajectory_history(traj, 1.0, 1.0, scale=0.01)
        th = np.linspace(-1, 0, 13)
        np.testing.assert_allclose(seg(th)[:, 0], 1.0 + 0.01 * th, atol=1e-13)
        np.testing.assert_allclose(seg.derivative(th)[:, 0], 0.01, atol=1e-13)

    def test_missing_interval_named(self):
        traj = identity_trajectory(-1.0, 2.0)
        with pytest.raises(DomainError, match=r"\[-1\.5, 0\.5\]"):
            trajectory_history(traj, 0.5, 2.0)
        with pytest.raises(DomainError):
            trajectory_history(traj, 2.5, 1.0)

    @given(st.floats(0.0, 2.0), st.floats(0.0, 1.0))
    def test_window_end_matches_query(self, t, r):
        tt = np.linspace(0.0, 2.0, 41)
        traj = Trajectory(tt, np.sin(3 * tt), 3 * np.cos(3 * tt),
                          HistorySegment.constant([0.0], 1.0))
        seg = trajectory_history(traj, t, r)
        assert seg(0.0)[0] == traj.query(t)[0]


class TestFieldSpec:
    def test_pointwise_delay_reads_both_ends(self):
        f = FieldSpec(FieldKind.POINTWISE_DELAY, 1, lambda t, x, xd: x - 2 * xd, delay=1.0)
        seg = HistorySegment.from_function(lambda th: 1 + th, 1.0)
        assert f(0.0, seg)[0] == pytest.approx(1.0)

    def test_vectorized_sample(self):
        f = FieldSpec(FieldKind.POINTWISE_ODE, 2, lambda t, x: [np.sin(t) * x[0], 3.0],
                      vectorized=True)
        ts = np.linspace(0, 1, 5)
        out = f.sample(ts, np.array([2.0, 0.0]))
        assert out.shape == (5, 2)
        np.testing.assert_allclose(out[:, 0], 2 * np.sin(ts))
        np.testing.assert_allclose(out[:, 1], 3.0)

    def test_evaluation_is_deterministic(self):
        f = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, x: np.cos(t) * x ** 3)
        a = f(0.3, np.array([1.7]))
        b = f(0.3, np.array([1.7]))
        assert a.tobytes() == b.tobytes()

    def test_pointwise_delay_needs_delay(self):
        with pytest.raises(ValueError):
            FieldSpec(FieldKind.POINTWISE_DELAY, 1, lambda t, x, xd: xd, delay=0.0)


class TestProblemSpec:
    ode_field = FieldSpec(FieldKind.POINTWISE_ODE, 1, lambda t, x: -x)
    delay_field = FieldSpec(FieldKind.POINTWISE_DELAY, 1, lambda t, x, xd: -xd, delay=1.0)

    def test_state_initial_becomes_segment(self):
        p = ProblemSpec(EquationClass.FAST_RFDE, self.delay_field, [1.0], 2.0, 0.1, 1.0)
        assert isinstance(p.initial, HistorySegment) and p.initial.r == 1.0

    @pytest.mark.parametrize("kwargs", [
        dict(equation_class="fast_ode", L=0.0, epsilon=0.1),
        dict(equation_class="fast_ode", L=1.0, epsilon=None),
        dict(equation_class="fast_ode", L=1.0, epsilon=-1.0),
        dict(equation_class="fast_rfde", L=1.0, epsilon=0.1),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ProblemSpec(field=self.ode_field, initial=[1.0], **kwargs)

    def test_delay_must_match_r(self):
        with pytest.raises(ValueError):
            ProblemSpec("fast_rfde", self.delay_field, [1.0], 1.0, 0.1, 0.5)

    def test_with_epsilon(self):
        p = ProblemSpec("fast_ode", self.ode_field, [1.0], 1.0, 0.1)
        assert p.with_epsilon(0.05).epsilon == 0.05 and p.epsilon == 0.1


def test_as_state_validation():
    assert as_state(3.0).shape == (1,)
    with pytest.raises(ValueError):
        as_state([1.0, np.inf])
    with pytest.raises(ValueError):
        as_state([1.0, 2.0], d=3)
    x = as_state([1.0, 2.0])
    with pytest.raises(ValueError):
        x[0] = 5.0

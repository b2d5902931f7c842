"""scikit-learn style wrappers.

:class:`FieldAverager` is a transformer from states to averaged field
values; :class:`AveragingSolver` fits a trajectory from an initial
condition and predicts states at query times. Both support
``get_params``/``set_params``/``clone``, so sweeps are
``clone(solver).set_params(epsilon=e).fit(x0)``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .average import (DEFAULT_PROBES, average_almost_periodic, average_cesaro,
                      average_periodic, build_averaged_field, lift_constant_history)
from .core import EquationClass, FieldKind, FieldSpec, HistorySegment, ProblemSpec
from .harness import averaged_problem, default_mode
from .integrate import IntegratorConfig, solve
from .validation import (check_initial, check_nonnegative, check_positive, check_states,
                         check_times)


def _check_field(field) -> FieldSpec:
    if not isinstance(field, FieldSpec):
        raise TypeError(f"field must be a FieldSpec, got {type(field).__name__}")
    return field


class FieldAverager(TransformerMixin, BaseEstimator):
    """Transform states ``x`` into averaged field values ``F(x)``.

    For a pointwise-delay field without ``lift`` each row is ``[x, xd]``
    (2d columns) and the output has d columns. With ``lift=True`` rows are
    states and the output is ``G(x) = F(x~)``.
    """

    def __init__(self, field=None, mode="auto", tol=None, lift=False, r=None,
                 period=None, T0=1.0, T_max=1e6, s_probes=DEFAULT_PROBES):
        self.field = field
        self.mode = mode
        self.tol = tol
        self.lift = lift
        self.r = r
        self.period = period
        self.T0 = T0
        self.T_max = T_max
        self.s_probes = s_probes

    def _options(self):
        opts = {"T0": self.T0, "T_max": self.T_max, "s_probes": tuple(self.s_probes)}
        if self.period is not None:
            opts["period"] = check_positive(self.period, "period")
        return opts

    def fit(self, X=None, y=None):
        field = _check_field(self.field)
        if field.kind is FieldKind.FUNCTIONAL and not self.lift:
            raise ValueError("functional fields can only be transformed with lift=True")
        mode = self.mode
        if mode == "auto":
            mode = "periodic" if (self.period or field.period) else "cesaro"
        self.mode_ = mode
        self.averaged_field_ = build_averaged_field(field, mode, self.tol, lift=self.lift,
                                                    r=self.r, **self._options())
        lifted = self.lift or field.kind is FieldKind.POINTWISE_ODE
        self.n_features_in_ = field.dim if lifted else 2 * field.dim
        if X is not None:
            check_states(X, self.n_features_in_)
        return self

    def transform(self, X):
        check_is_fitted(self, "averaged_field_")
        X = check_states(X, self.n_features_in_)
        F = self.averaged_field_
        d = self.field.dim
        if F.kind is FieldKind.POINTWISE_ODE:
            return np.array([F(0.0, row) for row in X])
        return np.array([F.func(0.0, row[:d], row[d:]) for row in X])

    def estimate(self, x):
        """Full :class:`AverageEstimate` at one state (lifted when ``lift``)."""
        check_is_fitted(self, "averaged_field_")
        field = self.field
        arg = np.asarray(x, dtype=float)
        if self.lift:
            arg = lift_constant_history(arg, field.delay if self.r is None else self.r)
        elif field.kind is FieldKind.POINTWISE_DELAY:
            d = field.dim
            arg = HistorySegment([-field.delay, 0.0], np.stack([arg[d:], arg[:d]]))
        opts = self._options()
        tol = self.tol
        if self.mode_ == "periodic":
            return average_periodic(field, arg, opts.get("period"))
        if self.mode_ == "cesaro":
            return average_cesaro(field, arg, **({"tol": tol} if tol else {}),
                                  T0=self.T0, T_max=self.T_max)
        return average_almost_periodic(field, arg, **({"tol": tol} if tol else {}),
                                       s_probes=opts["s_probes"], T0=self.T0, T_max=self.T_max)


class AveragingSolver(BaseEstimator):
    """Fit a trajectory from an initial condition; predict states at times.

    With ``averaged=True`` the averaged counterpart of the oscillatory
    problem is solved instead (the averaged ODE for normal-form RFDEs).
    """

    def __init__(self, field=None, equation_class="fast_ode", epsilon=0.01, r=0.0, L=1.0,
                 h=1e-3, blow_up_bound=1e8, averaged=False, mode=None, tol=None):
        self.field = field
        self.equation_class = equation_class
        self.epsilon = epsilon
        self.r = r
        self.L = L
        self.h = h
        self.blow_up_bound = blow_up_bound
        self.averaged = averaged
        self.mode = mode
        self.tol = tol

    def _problem(self, X) -> ProblemSpec:
        field = _check_field(self.field)
        cls = EquationClass(self.equation_class)
        r = check_nonnegative(self.r, "r")
        L = check_positive(self.L, "L")
        eps = None if self.epsilon is None else check_positive(self.epsilon, "epsilon")
        initial = check_initial(X, field.dim, r)
        if cls not in (EquationClass.FAST_ODE, EquationClass.AVERAGED_ODE) \
                and not isinstance(initial, HistorySegment):
            initial = HistorySegment.constant(initial, r)
        return ProblemSpec(cls, field, initial, L, eps, r)

    def fit(self, X, y=None):
        problem = self._problem(X)
        if self.averaged:
            problem = averaged_problem(problem, self.mode or default_mode(problem.field), self.tol)
        self.problem_ = problem
        self.config_ = IntegratorConfig(h=check_positive(self.h, "h"),
                                        blow_up_bound=check_positive(self.blow_up_bound,
                                                                     "blow_up_bound"))
        self.trajectory_ = solve(problem, self.config_)
        self.n_features_in_ = problem.field.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "trajectory_")
        return self.trajectory_.query(check_times(X))

    def score(self, X, y):
        """Negative largest Euclidean deviation from ``y`` at times ``X``."""
        pred = self.predict(X)
        y = check_states(y, self.n_features_in_)
        return -float(np.max(np.linalg.norm(pred - y, axis=1)))

"""Averaging of fast-oscillating ODEs and retarded functional differential equations.

Solve ``x' = f(t/eps, x)`` and its delay variants with a fixed-step RK4
integrator with dense output, estimate time averages of the field, and
measure how closely the averaged equation tracks the original as eps
shrinks.
"""
from .average import (AverageEstimate, AveragingError, NoAverageError, NotAlmostPeriodicError,
                      average_almost_periodic, average_cesaro, average_periodic,
                      build_averaged_field, lift_constant_history)
from .core import (DomainError, EquationClass, FieldKind, FieldSpec, HistorySegment,
                   ProblemSpec, Trajectory, trajectory_history)
from .estimators import AveragingSolver, FieldAverager
from .fields import catalog, expression_field, get_entry, parse_field_expr
from .harness import (FieldRejectedError, GuardReport, SweepReport, SweepRow, averaged_problem,
                      epsilon_sweep, hypothesis_guard, stroboscopic_residual, sup_error)
from .integrate import (BlowUpError, HistoryUnderrunError, IntegrationError, IntegratorConfig,
                        NodeBudgetError, NonFiniteError, solve, solve_averaged_ode,
                        solve_averaged_rfde, solve_fast_ode, solve_fast_rfde,
                        solve_rfde_normal_form)

__version__ = "0.1.0"

__all__ = [
    "AverageEstimate", "AveragingError", "AveragingSolver", "BlowUpError", "DomainError",
    "EquationClass", "FieldAverager", "FieldKind", "FieldRejectedError", "FieldSpec",
    "GuardReport", "HistorySegment", "HistoryUnderrunError", "IntegrationError",
    "IntegratorConfig", "NoAverageError", "NodeBudgetError", "NonFiniteError",
    "NotAlmostPeriodicError", "ProblemSpec", "SweepReport", "SweepRow", "Trajectory",
    "average_almost_periodic",
    "average_cesaro", "average_periodic", "averaged_problem", "build_averaged_field",
    "catalog", "epsilon_sweep", "expression_field", "get_entry", "hypothesis_guard",
    "lift_constant_history", "parse_field_expr", "solve", "solve_averaged_ode",
    "solve_averaged_rfde", "solve_fast_ode", "solve_fast_rfde", "solve_rfde_normal_form",
    "stroboscopic_residual", "sup_error", "trajectory_history",
]

from .builtin import CatalogEntry, catalog, expression_field, get_entry
from .expr import (ArityError, DelayedVariableError, ExprError, ExprSyntaxError,
                   UnbalancedParenError, UnknownIdentifierError, eval_expr,
                   parse_field_expr, to_source)

__all__ = [
    "ArityError", "CatalogEntry", "DelayedVariableError", "ExprError", "ExprSyntaxError",
    "UnbalancedParenError", "UnknownIdentifierError", "catalog", "eval_expr",
    "expression_field", "get_entry", "parse_field_expr", "to_source",
]

"""User-supplied generators and terminals written as arithmetic strings.

Sources are parsed with sympy against a fixed name table and compiled to numpy
callables with ``sympy.lambdify``. Variables are ``t``, ``x1`` … ``xN``, ``y``, ``z``;
constants ``pi`` and ``e``; functions exp, log, abs, min, max, pow, sqrt, sin, cos, tanh.
Both ``^`` and ``**`` denote powers.
"""

import math
from dataclasses import dataclass
from tokenize import TokenError
from typing import Callable

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from glab.errors import ConfigurationError
from glab.models import GeneratorSpec, Reduction, TerminalSpec

_TRANSFORMATIONS = standard_transformations + (convert_xor,)

# min/max stay unevaluated and lambdify to the elementwise ufuncs
_MAXIMUM = sp.Function("maximum")
_MINIMUM = sp.Function("minimum")
_BINARY_UFUNCS = {"maximum": np.maximum, "minimum": np.minimum}

FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "abs": sp.Abs,
    "sqrt": sp.sqrt,
    "sin": sp.sin,
    "cos": sp.cos,
    "tanh": sp.tanh,
    "pow": sp.Pow,
    "max": _MAXIMUM,
    "min": _MINIMUM,
}

CONSTANTS = {"pi": sp.pi, "e": sp.E}

# what the parser's own transformations emit; nothing else is reachable
_PARSER_GLOBALS = {
    "__builtins__": {},
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
    "Symbol": sp.Symbol,
    "Function": sp.Function,
}

_ALIASES = str.maketrans({"×": "*", "÷": "/", "−": "-"})


@dataclass(frozen=True)
class Expression:
    source: str
    variables: frozenset[str]
    expr: sp.Expr
    fn: Callable
    names: tuple[str, ...]

    def __call__(self, **env) -> np.ndarray:
        with np.errstate(all="ignore"):
            return np.asarray(self.fn(*(env[name] for name in self.names)), dtype=float)


def _parse(source: str, variables: frozenset[str]) -> sp.Expr:
    symbols = {name: sp.Symbol(name, real=True) for name in variables}
    local_dict = {**FUNCTIONS, **CONSTANTS, **symbols}
    try:
        expr = parse_expr(
            source.translate(_ALIASES),
            local_dict=local_dict,
            global_dict=dict(_PARSER_GLOBALS),
            transformations=_TRANSFORMATIONS,
        )
    except (TokenError, SyntaxError, TypeError, ValueError, NameError, AttributeError, sp.SympifyError) as e:
        raise ConfigurationError(f"cannot parse expression {source!r}: {e}") from e
    if not isinstance(expr, sp.Expr):
        raise ConfigurationError(f"expression {source!r} is not arithmetic")
    return expr


def _validate(expr: sp.Expr, source: str, variables: frozenset[str]) -> None:
    for call in expr.atoms(AppliedUndef):
        name = call.func.__name__
        if name not in _BINARY_UFUNCS:
            raise ConfigurationError(f"unknown function {name!r} in {source!r}")
        if len(call.args) != 2:
            raise ConfigurationError(f"{name} takes 2 arguments, got {len(call.args)} in {source!r}")
    unknown = sorted(s.name for s in expr.free_symbols if s.name not in variables)
    if unknown:
        raise ConfigurationError(
            f"unknown variable {unknown[0]!r} in {source!r} (allowed: {', '.join(sorted(variables))})"
        )
    if expr.has(sp.I, sp.zoo, sp.nan):
        raise ConfigurationError(f"expression {source!r} is not real and finite")


def parse_expression(source: str, variables) -> Expression:
    if not source or not source.strip():
        raise ConfigurationError("empty expression")
    allowed = frozenset(variables)
    expr = _parse(source, allowed)
    _validate(expr, source, allowed)
    names = tuple(sorted(s.name for s in expr.free_symbols))
    symbols = [sp.Symbol(name, real=True) for name in names]
    fn = sp.lambdify(symbols, expr, modules=[_BINARY_UFUNCS, "numpy"])
    return Expression(source=source, variables=frozenset(names), expr=expr, fn=fn, names=names)


def _increment_names(n_vars: int) -> list[str]:
    return [f"x{i}" for i in range(1, n_vars + 1)]


def _increment_env(x: np.ndarray, n_vars: int, reduction: Reduction) -> dict[str, np.ndarray]:
    if reduction == "sum":
        # x1 stands for the running sum
        return {"x1": np.sum(x, axis=-1)}
    return {name: x[..., i] for i, name in enumerate(_increment_names(n_vars))}


def generator_from_expression(
    source: str,
    n_vars: int,
    m0: float,
    l_y: float,
    l_z: float,
    l_x: float = 0.0,
    reduction: Reduction = "none",
) -> GeneratorSpec:
    names = ["x1"] if reduction == "sum" else _increment_names(n_vars)
    expr = parse_expression(source, ["t", "y", "z", *names])

    def evaluate(t, x, y, z):
        return expr(t=t, y=y, z=z, **_increment_env(x, n_vars, reduction))

    return GeneratorSpec(
        eval=evaluate,
        n_vars=n_vars,
        m0=m0,
        l_y=l_y,
        l_z=l_z,
        l_x=l_x,
        name=f"expr:{source}",
        reduction=reduction,
    )


def terminal_from_expression(
    source: str,
    n_vars: int,
    bound: float = math.inf,
    lipschitz: float = math.inf,
    reduction: Reduction = "none",
) -> TerminalSpec:
    names = ["x1"] if reduction == "sum" else _increment_names(n_vars)
    expr = parse_expression(source, names)

    def phi(x):
        return expr(**_increment_env(x, n_vars, reduction))

    return TerminalSpec(
        phi=phi,
        n_vars=n_vars,
        bound=bound,
        lipschitz=lipschitz,
        name=f"expr:{source}",
        reduction=reduction,
    )

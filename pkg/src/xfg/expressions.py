"""Parsing of the arithmetic expressions used in JSON configs and CLI flags.

Expressions are written over named variables (``x1..xn``, ``eta1..etam``,
``xi1..xin``, ``y1..yn``, ``h``) with ``^`` accepted as a power operator.
They are parsed with sympy and compiled to vectorized numpy callables.
"""

from __future__ import annotations

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from .errors import ConfigError

_FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "abs": sp.Abs,
    "Abs": sp.Abs,
    "frac": sp.frac,
    "floor": sp.floor,
    "max": sp.Max,
    "min": sp.Min,
    "Max": sp.Max,
    "Min": sp.Min,
    "pi": sp.pi,
}

_TRANSFORMS = standard_transformations + (convert_xor,)


def symbols(prefix: str, count: int) -> list[sp.Symbol]:
    return [sp.Symbol(f"{prefix}{i + 1}", real=True) for i in range(count)]


def parse(text, allowed: dict[str, sp.Symbol]) -> sp.Expr:
    """Parse ``text`` allowing only the variables in ``allowed``."""
    if isinstance(text, (int, float)):
        return sp.Float(text) if isinstance(text, float) else sp.Integer(text)
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"expected a non-empty expression string, got {text!r}")
    local = dict(_FUNCTIONS)
    local.update(allowed)
    try:
        expr = parse_expr(text, local_dict=local, global_dict={"Integer": sp.Integer,
                                                               "Float": sp.Float,
                                                               "Rational": sp.Rational,
                                                               "Symbol": sp.Symbol},
                          transformations=_TRANSFORMS, evaluate=True)
    except Exception as exc:  # sympy raises a zoo of exception types
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from None
    if not isinstance(expr, sp.Expr):
        raise ConfigError(f"expression {text!r} is not arithmetic")
    unknown = {str(s) for s in expr.free_symbols} - set(allowed)
    if unknown:
        raise ConfigError(f"expression {text!r} uses unknown variables {sorted(unknown)}")
    return expr


def compile_scalar(expr: sp.Expr, args: list[sp.Symbol]):
    """Compile ``expr`` into ``fn(*arrays) -> array`` broadcasting over inputs."""
    fn = sp.lambdify(args, expr, modules="numpy")

    def wrapped(*arrays):
        out = fn(*arrays)
        shape = np.broadcast_shapes(*(np.shape(a) for a in arrays)) if arrays else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    return wrapped


def compile_matrix(exprs: sp.Matrix, args: list[sp.Symbol]):
    """Compile a matrix of expressions into ``fn(points) -> (..., r, c)``."""
    rows, cols = exprs.shape
    cells = [[compile_scalar(exprs[i, j], args) for j in range(cols)] for i in range(rows)]

    def fn(points):
        points = np.asarray(points, dtype=float)
        comps = [points[..., k] for k in range(points.shape[-1])]
        out = np.empty(points.shape[:-1] + (rows, cols))
        for i in range(rows):
            for j in range(cols):
                out[..., i, j] = cells[i][j](*comps)
        return out

    return fn


def parse_matrix(rows, allowed: dict[str, sp.Symbol], shape=None) -> sp.Matrix:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ConfigError("matrix must be a non-empty list of rows")
    mat = sp.Matrix([[parse(e, allowed) for e in row] for row in rows])
    if shape is not None and mat.shape != tuple(shape):
        raise ConfigError(f"matrix has shape {mat.shape}, expected {tuple(shape)}")
    return mat


def parse_vector(text: str, dim: int | None = None) -> np.ndarray:
    """Parse ``"1,2,3"`` into a float vector."""
    try:
        vec = np.array([float(t) for t in str(text).split(",") if t.strip()], dtype=float)
    except ValueError:
        raise ConfigError(f"cannot parse vector {text!r}") from None
    if dim is not None and vec.size != dim:
        raise ConfigError(f"vector {text!r} has {vec.size} entries, expected {dim}")
    return vec

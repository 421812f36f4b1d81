"""A deliberately tiny arithmetic language for coefficient fields in configuration files.

Grammar: numbers, the variables ``x`` (first coordinate), ``x1``, ``x2``, the
constants ``pi`` and ``e``, the operators ``+ - * / ^`` (``**`` is accepted as a
synonym of ``^``), parentheses, and the functions ``sin``, ``cos``, ``exp``.
Anything else is rejected when the expression is compiled.
"""
from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

from .errors import ConfigurationError

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
CONSTANTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}


class ExpressionError(ConfigurationError):
    pass


def _variables(dim):
    names = {"x": 0}
    names.update({f"x{j + 1}": j for j in range(dim)})
    return names


def _check(node, names, src):
    if isinstance(node, ast.Expression):
        return _check(node.body, names, src)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {src!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in names and node.id not in CONSTANTS:
            raise ExpressionError(f"unknown name {node.id!r} in {src!r}")
        return
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator not allowed in {src!r}")
        _check(node.left, names, src)
        _check(node.right, names, src)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _check(node.operand, names, src)
    if isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS) or node.keywords \
                or len(node.args) != 1:
            raise ExpressionError(f"only sin, cos, exp of one argument are allowed in {src!r}")
        return _check(node.args[0], names, src)
    raise ExpressionError(f"unsupported syntax in {src!r}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](_eval(node.args[0], env))
    raise ExpressionError("unsupported syntax")


def compile_expression(src, dim: int = 1) -> Callable:
    """Compile ``src`` (string or number) into ``f(points) -> values`` for ``(n, dim)`` points."""
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        value = float(src)
        return lambda pts: np.full(np.asarray(pts).reshape(-1, dim).shape[0], value)
    if not isinstance(src, str):
        raise ExpressionError(f"expected a number or an expression string, got {src!r}")
    try:
        # textual mapping keeps the usual precedence of ^ (Python's ^ binds looser than +)
        tree = ast.parse(src.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {src!r}: {exc.msg}") from None
    names = _variables(dim)
    _check(tree, names, src)
    body = tree.body

    def f(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, dim)
        env = dict(CONSTANTS)
        env.update({k: pts[:, j] for k, j in names.items()})
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(_eval(body, env), dtype=float), (pts.shape[0],))
        return np.array(out)

    f.source = src
    return f


def evaluate_expression(src, points, dim: int = 1) -> np.ndarray:
    return compile_expression(src, dim)(points)

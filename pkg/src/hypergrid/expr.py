"""Tiny safe evaluators for numeric grid arguments and record filters.

Grid descriptors accept arithmetic such as ``geometric(1, 5*sqrt(333431), 10)``;
filters accept comparisons over hyperparameter names such as
``lr_rate > 0.01 and depth <= 7``.
"""

from __future__ import annotations

import ast
import math
import operator
from typing import Callable, Mapping

from .errors import ConfigError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos, ast.Not: operator.not_}
_CMPOPS = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}
_FUNCS = {"sqrt": math.sqrt, "log": math.log, "exp": math.exp, "floor": math.floor}


def _eval(node, names: Mapping[str, object] | None):
    if isinstance(node, ast.Expression):
        return _eval(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, str)):
        return node.value
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left, names), _eval(node.right, names))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval(node.operand, names))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        fn = _FUNCS.get(node.func.id)
        if fn is None or node.keywords:
            raise ConfigError(f"unsupported function {node.func.id!r}")
        return fn(*(_eval(a, names) for a in node.args))
    if isinstance(node, ast.Name):
        if names is None or node.id not in names:
            raise ConfigError(f"unknown name {node.id!r}")
        return names[node.id]
    if names is not None:
        if isinstance(node, ast.Compare):
            left = _eval(node.left, names)
            for op, comp in zip(node.ops, node.comparators):
                if type(op) not in _CMPOPS:
                    raise ConfigError("unsupported comparison")
                right = _eval(comp, names)
                if not _CMPOPS[type(op)](left, right):
                    return False
                left = right
            return True
        if isinstance(node, ast.BoolOp):
            values = (_eval(v, names) for v in node.values)
            return all(values) if isinstance(node.op, ast.And) else any(values)
    raise ConfigError(f"unsupported expression element {ast.dump(node)[:60]}")


def _parse(text: str) -> ast.Expression:
    try:
        return ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None


def eval_number(text: str) -> float:
    """Evaluate a constant arithmetic expression (``sqrt`` allowed)."""
    value = _eval(_parse(text), None)
    if isinstance(value, str):
        raise ConfigError(f"expected a number, got {text!r}")
    return value


def names_in(text: str) -> set[str]:
    tree = _parse(text)
    called = {n.func.id for n in ast.walk(tree) if isinstance(n, ast.Call) and isinstance(n.func, ast.Name)}
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - called


def compile_filter(text: str, known: set[str] | None = None) -> Callable[[Mapping[str, object]], bool]:
    """Compile a boolean filter over hyperparameter values.

    Raises ConfigError up front when ``known`` is given and the expression
    mentions a name outside it.
    """
    tree = _parse(text)
    if known is not None:
        unknown = names_in(text) - set(known)
        if unknown:
            raise ConfigError(f"filter references unknown hyperparameter(s): {sorted(unknown)}")

    def predicate(values: Mapping[str, object]) -> bool:
        return bool(_eval(tree, values))

    predicate.source = text  # type: ignore[attr-defined]
    return predicate

"""Payoff maps over (t, S1, S2, defaulted) and a small expression language.

Custom payoffs are written as arithmetic expressions over the names
``t``, ``S1``, ``S2`` and ``defaulted`` (0 or 1), the operators
``+ - * /``, unary signs, parentheses, numeric literals and calls to
``max`` / ``min``. Anything else is rejected at compile time.
"""

from __future__ import annotations

import ast
from typing import Callable

_ALLOWED_NAMES = {"t", "S1", "S2", "defaulted"}
_ALLOWED_FUNCS = {"max", "min"}
_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_ALLOWED_UNARY = (ast.UAdd, ast.USub)


def put(strike: float) -> Callable:
    """Right to sell the default-free asset at the strike."""
    strike = float(strike)

    def payoff(t, s1, s2, defaulted):
        return max(strike - s1, 0.0)

    return payoff


def call(strike: float) -> Callable:
    """Right to buy the default-free asset at the strike."""
    strike = float(strike)

    def payoff(t, s1, s2, defaulted):
        return max(s1 - strike, 0.0)

    return payoff


def _validate(node: ast.AST, source: str) -> None:
    if isinstance(node, ast.Expression):
        _validate(node.body, source)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _ALLOWED_BINOPS):
            raise ValueError(f"payoff expression: operator not allowed in {source!r}")
        _validate(node.left, source)
        _validate(node.right, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _ALLOWED_UNARY):
            raise ValueError(f"payoff expression: operator not allowed in {source!r}")
        _validate(node.operand, source)
    elif isinstance(node, ast.Call):
        if (not isinstance(node.func, ast.Name)
                or node.func.id not in _ALLOWED_FUNCS
                or node.keywords):
            raise ValueError(f"payoff expression: only max/min calls are allowed in {source!r}")
        if len(node.args) < 2:
            raise ValueError(f"payoff expression: {node.func.id} needs at least two arguments")
        for arg in node.args:
            _validate(arg, source)
    elif isinstance(node, ast.Name):
        if node.id not in _ALLOWED_NAMES:
            raise ValueError(f"payoff expression: unknown name {node.id!r} in {source!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ValueError(f"payoff expression: literal {node.value!r} not allowed")
    else:
        raise ValueError(f"payoff expression: syntax not allowed in {source!r}")


def compile_payoff(source: str) -> Callable:
    """Compile an expression string into a payoff map; rejects anything
    outside the documented grammar."""
    try:
        parsed = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"payoff expression: cannot parse {source!r}: {exc}") from None
    _validate(parsed, source)
    code = compile(parsed, "<payoff>", "eval")

    def payoff(t, s1, s2, defaulted):
        scope = {"t": t, "S1": s1, "S2": s2,
                 "defaulted": 1.0 if defaulted else 0.0,
                 "max": max, "min": min}
        return float(eval(code, {"__builtins__": {}}, scope))

    return payoff


def payoff_from_config(cfg: dict) -> Callable:
    """Resolve the CLI payoff block {kind, strike | expr} to a map."""
    kind = cfg.get("kind")
    if kind == "put":
        if "strike" not in cfg:
            raise ValueError("payoff.strike: required for kind 'put'")
        return put(cfg["strike"])
    if kind == "call":
        if "strike" not in cfg:
            raise ValueError("payoff.strike: required for kind 'call'")
        return call(cfg["strike"])
    if kind == "expr":
        if "expr" not in cfg:
            raise ValueError("payoff.expr: required for kind 'expr'")
        return compile_payoff(cfg["expr"])
    raise ValueError(f"payoff.kind: expected 'put', 'call' or 'expr', got {kind!r}")

"""A small arithmetic expression language for boundary data.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom (("^" | "**") unary)?
    atom   := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

Names are the coordinates ``x1 .. xn`` and the constant ``pi``.  Functions:
sin, cos, exp, sqrt, abs.  Powers associate to the right and bind tighter
than unary minus, so ``-x1^2`` is ``-(x1^2)``.  Nothing is passed to
``eval``; expressions compile to a tree of numpy operations.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}
CONSTS = {"pi": np.pi}
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\*\*|[-+*/^()]))")


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple = ()
    value: float | str | None = None


def tokenize(text: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExpressionError(f"unexpected character {text[pos:].strip()[:1]!r} at {pos}")
        num, name, sym = m.groups()
        if num is not None:
            out.append(("num", num))
        elif name is not None:
            out.append(("name", name))
        else:
            out.append(("sym", sym))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, sym=None):
        kind, val = self.peek()
        if kind is None:
            raise ExpressionError("unexpected end of expression")
        if sym is not None and val != sym:
            raise ExpressionError(f"expected {sym!r}, found {val!r}")
        self.i += 1
        return kind, val

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op = self.take()
            node = Node(op, (node, self.term()))
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            _, op = self.take()
            node = Node(op, (node, self.unary()))
        return node

    def unary(self):
        if self.peek()[1] in ("-", "+"):
            _, op = self.take()
            inner = self.unary()
            return Node("neg", (inner,)) if op == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return Node("^", (base, self.unary()))
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return Node("num", value=float(val))
        if kind == "name":
            if val in FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Node("call", (arg,), val)
            if self.peek()[1] == "(":
                raise ExpressionError(f"unknown function {val!r}; known: {sorted(FUNCS)}")
            if val in CONSTS:
                return Node("num", value=CONSTS[val])
            return Node("var", value=val)
        if val == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExpressionError(f"unexpected {val!r}")


@dataclass(frozen=True)
class Expression:
    text: str
    tree: Node

    def variables(self) -> set[str]:
        found, stack = set(), [self.tree]
        while stack:
            node = stack.pop()
            if node.op == "var":
                found.add(node.value)
            stack.extend(node.args)
        return found

    def check_dimension(self, n: int) -> None:
        allowed = {f"x{k}" for k in range(1, n + 1)}
        unknown = sorted(self.variables() - allowed)
        if unknown:
            raise ExpressionError(f"unknown variable(s) {unknown}; allowed: x1..x{n}")

    def __call__(self, *coords):
        env = {f"x{k + 1}": np.asarray(c, dtype=float) for k, c in enumerate(coords)}
        with np.errstate(all="ignore"):
            out = _evaluate(self.tree, env)
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords)) if coords else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()


def _evaluate(node: Node, env):
    op = node.op
    if op == "num":
        return node.value
    if op == "var":
        try:
            return env[node.value]
        except KeyError:
            raise ExpressionError(f"unbound variable {node.value!r}") from None
    if op == "neg":
        return -_evaluate(node.args[0], env)
    if op == "call":
        return FUNCS[node.value](_evaluate(node.args[0], env))
    a, b = (_evaluate(x, env) for x in node.args)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return np.divide(a, b)
    return np.power(a, b)


def parse(text: str) -> Expression:
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("expression must be a nonempty string")
    p = _Parser(tokenize(text))
    tree = p.expr()
    if p.i != len(p.toks):
        raise ExpressionError(f"unexpected {p.toks[p.i][1]!r} after complete expression")
    return Expression(text, tree)

"""Expression trees over tuple columns.

Predicates, key functions, and map functions are small expression trees so the
spec file format can describe them; host code may instead pass any pure Python
callable where a Predicate/KeyFunc/MapFunc is expected.
"""

from .errors import ValidationError
from .zset import element_column, exact_div


class Expr:
    def __call__(self, elem):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


class Col(Expr):
    __slots__ = ("index",)

    def __init__(self, index):
        self.index = index

    def __call__(self, elem):
        return element_column(elem, self.index)

    def to_json(self):
        return ["col", self.index]

    def __repr__(self):
        return f"Col({self.index})"


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    def __call__(self, elem):
        return self.value

    def to_json(self):
        return ["const", self.value]

    def __repr__(self):
        return f"Const({self.value!r})"


def _div(a, b):
    if b == 0:
        raise ValidationError("division by zero in expression")
    return exact_div(a, b)


def _mod(a, b):
    if b == 0:
        raise ValidationError("modulo by zero in expression")
    return a % b


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "%": _mod,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "and": lambda a, b: bool(a) and bool(b),
    "or": lambda a, b: bool(a) or bool(b),
}


class BinOp(Expr):
    __slots__ = ("op", "left", "right", "_fn")

    def __init__(self, op, left, right):
        if op not in _BINOPS:
            raise ValidationError(f"unknown operator {op!r}")
        self.op = op
        self.left = left
        self.right = right
        self._fn = _BINOPS[op]

    def __call__(self, elem):
        return self._fn(self.left(elem), self.right(elem))

    def to_json(self):
        return [self.op, self.left.to_json(), self.right.to_json()]

    def __repr__(self):
        return f"({self.left!r} {self.op} {self.right!r})"


class Not(Expr):
    __slots__ = ("inner",)

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, elem):
        return not self.inner(elem)

    def to_json(self):
        return ["not", self.inner.to_json()]


def parse_expr(node):
    """Parse the JSON list encoding: ["col",i], ["const",v], [op, l, r]."""
    if not isinstance(node, list) or not node:
        raise ValidationError(f"bad expression node: {node!r}")
    head = node[0]
    if head == "col":
        if len(node) != 2 or not isinstance(node[1], int):
            raise ValidationError(f"bad column reference: {node!r}")
        return Col(node[1])
    if head == "const":
        if len(node) != 2:
            raise ValidationError(f"bad constant: {node!r}")
        return Const(node[1])
    if head == "not":
        if len(node) != 2:
            raise ValidationError(f"bad negation: {node!r}")
        return Not(parse_expr(node[1]))
    if head in _BINOPS:
        if len(node) != 3:
            raise ValidationError(f"operator {head!r} takes two operands")
        return BinOp(head, parse_expr(node[1]), parse_expr(node[2]))
    raise ValidationError(f"unknown expression head {head!r}")


class KeyFunc:
    """Tuple-valued key: one value per expression."""

    __slots__ = ("exprs",)

    def __init__(self, exprs):
        self.exprs = tuple(Col(e) if isinstance(e, int) else e for e in exprs)

    def __call__(self, elem):
        return tuple(e(elem) for e in self.exprs)

    def __repr__(self):
        return f"KeyFunc({list(self.exprs)!r})"


class MapFunc:
    """Tuple-valued row constructor: one output column per expression."""

    __slots__ = ("exprs",)

    def __init__(self, exprs):
        self.exprs = tuple(Col(e) if isinstance(e, int) else e for e in exprs)

    def __call__(self, elem):
        return tuple(e(elem) for e in self.exprs)

    def __repr__(self):
        return f"MapFunc({list(self.exprs)!r})"


def as_callable(f):
    """Accept an Expr, KeyFunc, MapFunc, or plain callable."""
    if callable(f):
        return f
    raise ValidationError(f"expected a callable or expression, got {f!r}")

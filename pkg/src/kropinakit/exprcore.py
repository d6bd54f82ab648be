"""Scalar expressions in chart coordinates: parsing, evaluation, exact differentiation.

Grammar (ASCII, case-sensitive)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom [("^" | "**") exponent]
    exponent:= ["-" | "+"] INTEGER | "(" ["-" | "+"] INTEGER ")"
    atom    := NUMBER | COORD | FUNC "(" expr ")" | "(" expr ")"

    FUNC    := sin | cos | exp | ln | sqrt | atan
    COORD   := one of the chart's coordinate names (x1..xn by default)

Precedence is power > unary minus > (* /) > (+ -); binary operators are
left-associative, so ``-x1^2`` is ``-(x1^2)`` and ``1/x1*x2`` is ``(1/x1)*x2``.
Powers take integer exponents only; write other powers through exp/ln.

Nodes are hash-consed: two structurally equal expressions are the same object,
so derivatives are memoised per node and compilation shares common
subexpressions automatically.
"""
from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifierError

if TYPE_CHECKING:  # pragma: no cover
    from .geom import Chart

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "atan")

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


class Expr:
    """Immutable, interned expression node. Build through the constructors below."""

    __slots__ = ("op", "args", "value", "_diff", "_fn", "__weakref__")

    def __init__(self, op, args, value):
        self.op = op
        self.args = args
        self.value = value
        self._diff = {}
        self._fn = None

    def __repr__(self):
        return f"Expr({to_source(self)!r})"

    def __str__(self):
        return to_source(self)

    def __reduce__(self):
        return (from_source_tree, (_to_tree(self),))

    @property
    def is_const(self):
        return self.op == "const"

    def diff(self, k: int) -> "Expr":
        """Exact partial derivative with respect to coordinate index ``k`` (0-based)."""
        d = self._diff.get(k)
        if d is None:
            d = _derivative(self, k)
            self._diff[k] = d
        return d

    def evaluate(self, x) -> float:
        if self._fn is None:
            self._fn = Evaluator([self])
        return float(self._fn(x)[0])

    def variables(self) -> set:
        return {n.index for n in _walk(self) if n.op == "var"}

    @property
    def index(self):
        return self.value[0]

    @property
    def name(self):
        return self.value[1]


_TABLE: dict = {}
_LOCK = threading.Lock()


def _intern(op, args=(), value=None) -> Expr:
    key = (op, args, value)
    node = _TABLE.get(key)
    if node is None:
        with _LOCK:
            node = _TABLE.get(key)
            if node is None:
                node = Expr(op, args, value)
                _TABLE[key] = node
    return node


# ---------------------------------------------------------------------------
# simplifying constructors

def const(v) -> Expr:
    v = float(v)
    if not math.isfinite(v):
        raise DomainError(f"non-finite constant {v}")
    if v == 0.0:
        v = 0.0  # fold -0.0
    return _intern("const", (), v)


def var(index: int, name: str | None = None) -> Expr:
    return _intern("var", (), (int(index), name or f"x{index + 1}"))


ZERO = const(0.0)
ONE = const(1.0)
TWO = const(2.0)


def _cval(e):
    return e.value if e.op == "const" else None


def neg(a: Expr) -> Expr:
    if a.op == "const":
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    if a.op == "mul" and a.args[0].op == "const":
        return mul(const(-a.args[0].value), a.args[1])
    return _intern("neg", (a,))


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    if b.op == "neg":
        return sub(a, b.args[0])
    if a.op == "neg":
        return sub(b, a.args[0])
    if b.op == "mul" and b.args[0].op == "const" and b.args[0].value < 0:
        return sub(a, mul(const(-b.args[0].value), b.args[1]))
    return _intern("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    if a is b:
        return ZERO
    if b.op == "neg":
        return add(a, b.args[0])
    if b.op == "mul" and b.args[0].op == "const" and b.args[0].value < 0:
        return add(a, mul(const(-b.args[0].value), b.args[1]))
    return _intern("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca * cb)
    if cb is not None:  # constants to the left
        a, b, ca, cb = b, a, cb, ca
    if ca is not None:
        if ca == 0.0:
            return ZERO
        if ca == 1.0:
            return b
        if ca == -1.0:
            return neg(b)
        if b.op == "mul" and b.args[0].op == "const":
            return mul(const(ca * b.args[0].value), b.args[1])
        if b.op == "neg":
            return mul(const(-ca), b.args[0])
    if a.op == "neg" and b.op == "neg":
        return mul(a.args[0], b.args[0])
    if a.op == "neg":
        return neg(mul(a.args[0], b))
    if b.op == "neg":
        return neg(mul(a, b.args[0]))
    return _intern("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if cb is not None and cb == 0.0:
        return _intern("div", (a, b))  # left for evaluation to report
    if ca is not None and cb is not None:
        return const(ca / cb)
    if ca == 0.0:
        return ZERO
    if cb == 1.0:
        return a
    if cb == -1.0:
        return neg(a)
    if a is b:
        return ONE
    if cb is not None:
        return mul(const(1.0 / cb), a)
    if a.op == "neg":
        return neg(div(a.args[0], b))
    if b.op == "neg":
        return neg(div(a, b.args[0]))
    return _intern("div", (a, b))


def power(a: Expr, n: int) -> Expr:
    if int(n) != n:
        raise ExprSyntaxError(f"power exponent must be an integer, got {n}")
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    ca = _cval(a)
    if ca is not None and not (ca == 0.0 and n < 0):
        try:
            return const(ca ** n)
        except OverflowError:
            pass
    if a.op == "pow":
        return power(a.args[0], a.value * n)
    return _intern("pow", (a,), n)


_FOLD = {
    "sin": math.sin, "cos": math.cos, "exp": math.exp,
    "ln": math.log, "sqrt": math.sqrt, "atan": math.atan,
}


def func(name: str, a: Expr) -> Expr:
    if name not in _FOLD:
        raise ExprSyntaxError(f"unknown function {name!r}")
    ca = _cval(a)
    if ca is not None:
        if name in ("ln", "sqrt") and ca <= 0.0:
            return _intern("func", (a,), name)
        try:
            return const(_FOLD[name](ca))
        except (OverflowError, ValueError, DomainError):
            return _intern("func", (a,), name)
    if name == "exp" and a.op == "func" and a.value == "ln":
        return a.args[0]
    if name == "ln" and a.op == "func" and a.value == "exp":
        return a.args[0]
    return _intern("func", (a,), name)


def sum_exprs(items: Iterable[Expr]) -> Expr:
    out = ZERO
    for e in items:
        out = add(out, e)
    return out


# ---------------------------------------------------------------------------
# differentiation

def _derivative(e: Expr, k: int) -> Expr:
    op = e.op
    if op == "const":
        return ZERO
    if op == "var":
        return ONE if e.index == k else ZERO
    if op == "neg":
        return neg(e.args[0].diff(k))
    if op in ("add", "sub"):
        a, b = e.args
        return (add if op == "add" else sub)(a.diff(k), b.diff(k))
    if op == "mul":
        a, b = e.args
        return add(mul(a.diff(k), b), mul(a, b.diff(k)))
    if op == "div":
        a, b = e.args
        da, db = a.diff(k), b.diff(k)
        if db is ZERO:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if op == "pow":
        a = e.args[0]
        n = e.value
        return mul(mul(const(n), power(a, n - 1)), a.diff(k))
    if op == "func":
        a = e.args[0]
        da = a.diff(k)
        if da is ZERO:
            return ZERO
        name = e.value
        if name == "sin":
            outer = func("cos", a)
        elif name == "cos":
            outer = neg(func("sin", a))
        elif name == "exp":
            outer = e
        elif name == "ln":
            return div(da, a)
        elif name == "sqrt":
            return div(da, mul(TWO, e))
        elif name == "atan":
            return div(da, add(ONE, power(a, 2)))
        else:  # pragma: no cover
            raise AssertionError(name)
        return mul(outer, da)
    raise AssertionError(op)  # pragma: no cover


# ---------------------------------------------------------------------------
# printing

def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(e: Expr) -> str:
    """Render in the input grammar; ``parse(to_source(e))`` rebuilds ``e`` (up to float repr)."""
    memo: dict = {}

    def prec(n):
        if n.op == "const":
            return 3 if n.value < 0 else 5
        if n.op in ("var", "func"):
            return 5
        return _PREC[n.op]

    def wrap(n, need):
        s = render(n)
        return f"({s})" if prec(n) < need else s

    def render(n):
        s = memo.get(n)
        if s is not None:
            return s
        op = n.op
        if op == "const":
            s = _fmt_num(n.value)
        elif op == "var":
            s = n.name
        elif op == "func":
            s = f"{n.value}({render(n.args[0])})"
        elif op == "neg":
            s = "-" + wrap(n.args[0], 3)
        elif op == "pow":
            exp = n.value
            s = wrap(n.args[0], 5) + ("^" + str(exp) if exp > 0 else f"^({exp})")
        else:
            a, b = n.args
            p = _PREC[op]
            sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[op]
            s = wrap(a, p) + sym + wrap(b, p + 1)
        memo[n] = s
        return s

    return render(e)


def _to_tree(e: Expr):
    if e.op == "const" or e.op == "var":
        return (e.op, e.value)
    return (e.op, e.value, tuple(_to_tree(a) for a in e.args))


def from_source_tree(tree) -> Expr:
    op = tree[0]
    if op == "const":
        return const(tree[1])
    if op == "var":
        return var(*tree[1])
    args = tuple(from_source_tree(t) for t in tree[2])
    return _intern(op, args, tree[1])


def _walk(e: Expr):
    """Unique nodes of the DAG in post-order (children before parents), iteratively."""
    seen = set()
    out = []
    stack = [(e, False)]
    while stack:
        node, done = stack.pop()
        if done:
            out.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for a in reversed(node.args):
            if id(a) not in seen:
                stack.append((a, False))
    return out


def node_count(e: Expr) -> int:
    return len(_walk(e))


# ---------------------------------------------------------------------------
# evaluation

def _check_finite(v, node, x):
    if not math.isfinite(v):
        raise DomainError("non-finite value", to_source(node), x)
    return v


def evaluate_tree(e: Expr, x: Sequence[float]) -> float:
    """Reference tree-walking evaluator; slow, but pinpoints the failing subexpression."""
    vals: dict = {}
    for n in _walk(e):
        op = n.op
        try:
            if op == "const":
                v = n.value
            elif op == "var":
                v = float(x[n.index])
            elif op == "neg":
                v = -vals[n.args[0]]
            elif op == "add":
                v = vals[n.args[0]] + vals[n.args[1]]
            elif op == "sub":
                v = vals[n.args[0]] - vals[n.args[1]]
            elif op == "mul":
                v = vals[n.args[0]] * vals[n.args[1]]
            elif op == "div":
                d = vals[n.args[1]]
                if d == 0.0:
                    raise DomainError("division by zero", to_source(n), x)
                v = vals[n.args[0]] / d
            elif op == "pow":
                b = vals[n.args[0]]
                if b == 0.0 and n.value < 0:
                    raise DomainError("negative power of zero", to_source(n), x)
                v = b ** n.value
            else:
                a = vals[n.args[0]]
                if n.value in ("ln", "sqrt") and a <= 0.0:
                    raise DomainError(f"{n.value} of non-positive argument {a:.6g}", to_source(n), x)
                v = _FOLD[n.value](a)
        except OverflowError:
            raise DomainError("overflow", to_source(n), x) from None
        vals[n] = _check_finite(v, n, x)
    return vals[e]


def _sqrt_pos(v):
    if v <= 0.0:
        raise ValueError("sqrt of non-positive argument")
    return math.sqrt(v)


_RUNTIME = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_ln": math.log,
    "_sqrt": _sqrt_pos, "_atan": math.atan,
}


class Evaluator:
    """Compiles a batch of expressions into one Python function with shared subexpressions.

    Calling it returns a float64 array of the expression values at ``x``.
    On any arithmetic failure it re-evaluates with :func:`evaluate_tree` to raise
    a :class:`DomainError` naming the offending subexpression.
    """

    def __init__(self, exprs: Sequence[Expr]):
        self.exprs = tuple(exprs)
        self._fn = self._compile()

    def _compile(self):
        names: dict = {}
        lines = []
        nvar = 1 + max((i for e in self.exprs for i in e.variables()), default=-1)
        for i in range(nvar):
            lines.append(f"    v{i} = float(x[{i}])")
        counter = 0

        def ref(n):
            if n.op == "const":
                return repr(n.value)
            if n.op == "var":
                return f"v{n.index}"
            return names[n]

        seen = set()
        for e in self.exprs:
            for n in _walk(e):
                if n.op in ("const", "var") or n in seen:
                    continue
                seen.add(n)
                op = n.op
                if op == "neg":
                    rhs = f"-{ref(n.args[0])}"
                elif op == "pow":
                    rhs = f"{ref(n.args[0])} ** {n.value}"
                elif op == "func":
                    rhs = f"_{n.value}({ref(n.args[0])})"
                else:
                    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
                    rhs = f"{ref(n.args[0])} {sym} {ref(n.args[1])}"
                name = f"t{counter}"
                counter += 1
                lines.append(f"    {name} = {rhs}")
                names[n] = name
        outs = ", ".join(ref(e) for e in self.exprs)
        src = "def _compiled(x):\n" + "\n".join(lines) + f"\n    return ({outs}{',' if outs else ''})\n"
        ns = dict(_RUNTIME)
        exec(compile(src, "<kropinakit-expr>", "exec"), ns)
        return ns["_compiled"]

    def __call__(self, x) -> np.ndarray:
        try:
            out = np.array(self._fn(x), dtype=float)
        except (ArithmeticError, ValueError):
            out = None
        if out is None or not np.all(np.isfinite(out)):
            for e in self.exprs:
                evaluate_tree(e, x)
            raise DomainError("non-finite value", point=x)  # pragma: no cover
        return out


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


class _Parser:
    def __init__(self, source: str, coords: Sequence[str]):
        if not source.isascii():
            bad = next(i for i, c in enumerate(source) if not c.isascii())
            raise ExprSyntaxError("non-ASCII character", source, bad)
        self.src = source
        self.coords = {name: i for i, name in enumerate(coords)}
        self.names = tuple(coords)
        self.toks = self._lex(source)
        self.i = 0

    def _lex(self, s):
        toks = []
        pos = 0
        while True:
            while pos < len(s) and s[pos].isspace():
                pos += 1
            if pos >= len(s):
                break
            m = _TOKEN.match(s, pos)
            if not m or m.end() == pos:
                raise ExprSyntaxError(f"unexpected character {s[pos]!r}", s, pos)
            start = m.start(m.lastgroup)
            toks.append((m.lastgroup, m.group(m.lastgroup), start))
            pos = m.end()
        toks.append(("end", "", len(s)))
        return toks

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        kind, val, pos = self.take()
        if val != text:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self.src, pos)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", self.src, 0)
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", self.src, pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return power(base, self.exponent())
        return base

    def exponent(self):
        paren = self.peek()[1] == "("
        if paren:
            self.take()
        sign = 1
        if self.peek()[1] in ("-", "+"):
            sign = -1 if self.take()[1] == "-" else 1
        kind, val, pos = self.take()
        if kind != "num" or not val.isdigit():
            raise ExprSyntaxError("power exponent must be an integer literal", self.src, pos)
        if paren:
            self.expect(")")
        return sign * int(val)

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "id":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(val, arg)
            if val in self.coords:
                return var(self.coords[val], val)
            raise UnknownIdentifierError(val, self.src, pos, self.names)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", self.src, pos)


def parse_expr(source: str, coords: Sequence[str]) -> Expr:
    return _Parser(source, coords).parse()


# ---------------------------------------------------------------------------
# fields

def _coords_of(chart) -> tuple:
    if hasattr(chart, "coordinates"):
        return tuple(chart.coordinates)
    return tuple(chart)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """An expression bound to a chart. Arithmetic operators build new fields."""

    expr: Expr
    chart: "Chart"

    def __post_init__(self):
        n = len(_coords_of(self.chart))
        bad = [i for i in self.expr.variables() if i >= n]
        if bad:
            raise UnknownIdentifierError(f"x{bad[0] + 1}", allowed=_coords_of(self.chart))

    @property
    def source(self) -> str:
        return to_source(self.expr)

    def __str__(self):
        return self.source

    def __repr__(self):
        return f"ScalarField({self.source!r})"

    def __call__(self, x) -> float:
        return self.evaluate(x)

    def evaluate(self, x) -> float:
        return self.expr.evaluate(x)

    def _index(self, k) -> int:
        coords = _coords_of(self.chart)
        if isinstance(k, str):
            if k not in coords:
                raise UnknownIdentifierError(k, allowed=coords)
            return coords.index(k)
        if not 0 <= k < len(coords):
            raise IndexError(f"coordinate index {k} out of range for a {len(coords)}-dimensional chart")
        return int(k)

    def diff(self, k) -> "ScalarField":
        """Partial derivative; ``k`` is a 0-based index or a coordinate name."""
        return ScalarField(self.expr.diff(self._index(k)), self.chart)

    @property
    def is_constant(self) -> bool:
        return self.expr.is_const

    def _lift(self, other) -> Expr:
        if isinstance(other, ScalarField):
            return other.expr
        if isinstance(other, Expr):
            return other
        return const(other)

    def __add__(self, o):
        return ScalarField(add(self.expr, self._lift(o)), self.chart)

    def __radd__(self, o):
        return ScalarField(add(self._lift(o), self.expr), self.chart)

    def __sub__(self, o):
        return ScalarField(sub(self.expr, self._lift(o)), self.chart)

    def __rsub__(self, o):
        return ScalarField(sub(self._lift(o), self.expr), self.chart)

    def __mul__(self, o):
        return ScalarField(mul(self.expr, self._lift(o)), self.chart)

    def __rmul__(self, o):
        return ScalarField(mul(self._lift(o), self.expr), self.chart)

    def __truediv__(self, o):
        return ScalarField(div(self.expr, self._lift(o)), self.chart)

    def __rtruediv__(self, o):
        return ScalarField(div(self._lift(o), self.expr), self.chart)

    def __neg__(self):
        return ScalarField(neg(self.expr), self.chart)

    def __pow__(self, n: int):
        return ScalarField(power(self.expr, n), self.chart)

    def apply(self, name: str) -> "ScalarField":
        return ScalarField(func(name, self.expr), self.chart)


def parse(source: str, chart) -> ScalarField:
    """Parse ``source`` against the coordinates of ``chart`` (a Chart or a list of names)."""
    return ScalarField(parse_expr(source, _coords_of(chart)), chart)


def evaluate(field: ScalarField, x) -> float:
    return field.evaluate(x)


def differentiate(field: ScalarField, k) -> ScalarField:
    return field.diff(k)


def constant_field(value: float, chart) -> ScalarField:
    return ScalarField(const(value), chart)

"""Expression trees for observables.

Nodes are hash-consed: two structurally equal expressions are the same
object, so equality is identity and common subexpressions are shared for
free.  Only constant folding and the 0/1 identities are applied on
construction; there is no other simplification.

Grammar accepted by :func:`parse`::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ["^" exponent]
    exponent := ["-"] NUMBER | "(" ["-"] NUMBER ["/" ["-"] NUMBER] ")"
    atom   := NUMBER | IDENT | FUNC "(" expr ["," expr] ")" | "(" expr ")"

with FUNC one of ``sin cos sqrt exp atan2``.
"""

from __future__ import annotations

import math
import re
import threading
import weakref
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ExpressionError, NonRationalExponentError, UnknownIdentifierError

FUNCTIONS = {"sin": 1, "cos": 1, "sqrt": 1, "exp": 1, "atan2": 2}

_BINARY = {"add": "+", "sub": "-", "mul": "*", "div": "/"}

_intern_lock = threading.Lock()
_intern: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """Immutable interned expression node.

    ``op`` is one of ``const var add sub mul div neg pow sin cos sqrt exp
    atan2``.  ``value`` holds the float of a constant, the name of a variable
    or the :class:`~fractions.Fraction` exponent of a power.
    """

    __slots__ = ("op", "args", "value", "_vars", "__weakref__")

    def __new__(cls, op: str, args: tuple = (), value=None):
        key = (op, value, tuple(id(a) for a in args))
        with _intern_lock:
            node = _intern.get(key)
            if node is not None:
                return node
            node = object.__new__(cls)
            node.op = op
            node.args = args
            node.value = value
            node._vars = None
            _intern[key] = node
        return node

    # identity semantics are exact because of interning
    def __eq__(self, other):
        return self is other

    def __hash__(self):
        return id(self)

    def __reduce__(self):
        return (parse_text_unchecked, (to_text(self),))

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    @property
    def free_vars(self) -> frozenset:
        if self._vars is None:
            if self.op == "var":
                self._vars = frozenset((self.value,))
            elif self.op == "const":
                self._vars = frozenset()
            else:
                acc: frozenset = frozenset()
                for a in self.args:
                    acc = acc | a.free_vars
                self._vars = acc
        return self._vars

    @property
    def is_const(self) -> bool:
        return self.op == "const"


# ---------------------------------------------------------------------------
# constructors with constant folding
# ---------------------------------------------------------------------------

def const(v: float) -> Expr:
    v = float(v)
    if v == 0.0:
        v = 0.0  # drop the sign of -0.0 so both intern to one node
    return Expr("const", (), v)


def var(name: str) -> Expr:
    return Expr("var", (), name)


ZERO = const(0.0)
ONE = const(1.0)


def _finite_const(fn, *vals):
    try:
        r = fn(*vals)
    except (ZeroDivisionError, ValueError, OverflowError):
        return None
    if isinstance(r, complex) or not math.isfinite(r):
        return None
    return const(r)


def _is(e: Expr, v: float) -> bool:
    return e.op == "const" and e.value == v


def add(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        r = _finite_const(lambda x, y: x + y, a.value, b.value)
        if r is not None:
            return r
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Expr("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        r = _finite_const(lambda x, y: x - y, a.value, b.value)
        if r is not None:
            return r
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Expr("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        r = _finite_const(lambda x, y: x * y, a.value, b.value)
        if r is not None:
            return r
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Expr("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        r = _finite_const(lambda x, y: x / y, a.value, b.value)
        if r is not None:
            return r
    if _is(b, 1.0):
        return a
    return Expr("div", (a, b))


def neg(a: Expr) -> Expr:
    if a.is_const:
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return Expr("neg", (a,))


def power(a: Expr, exponent) -> Expr:
    e = Fraction(exponent)
    if e == 0:
        return ONE
    if e == 1:
        return a
    if a.is_const:
        if e.denominator == 1:
            r = _finite_const(lambda x: x ** int(e), a.value)
        else:
            r = _finite_const(math.pow, a.value, float(e))
        if r is not None:
            return r
    return Expr("pow", (a,), e)


def func(name: str, *args: Expr) -> Expr:
    if FUNCTIONS.get(name) != len(args):
        raise ValueError(f"bad call {name}/{len(args)}")
    if all(a.is_const for a in args):
        vals = [a.value for a in args]
        if name == "atan2":
            if not (vals[0] == 0.0 and vals[1] == 0.0):
                r = _finite_const(math.atan2, *vals)
                if r is not None:
                    return r
        else:
            r = _finite_const(getattr(math, name), *vals)
            if r is not None:
                return r
    return Expr(name, tuple(args))


def sin(a):
    return func("sin", a)


def cos(a):
    return func("cos", a)


def sqrt(a):
    return func("sqrt", a)


def exp(a):
    return func("exp", a)


def atan2(y, x):
    return func("atan2", y, x)


def total(terms: Iterable[Expr]) -> Expr:
    acc = ZERO
    for t in terms:
        acc = add(acc, t)
    return acc


# ---------------------------------------------------------------------------
# differentiation, substitution
# ---------------------------------------------------------------------------

def diff(e: Expr, name: str, _memo: dict | None = None) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to variable ``name``."""
    memo = {} if _memo is None else _memo
    return _diff(e, name, memo)


def _diff(e: Expr, name: str, memo: dict) -> Expr:
    if name not in e.free_vars:
        return ZERO
    hit = memo.get(e)
    if hit is not None:
        return hit
    op = e.op
    if op == "var":
        r = ONE
    elif op == "add":
        r = add(_diff(e.args[0], name, memo), _diff(e.args[1], name, memo))
    elif op == "sub":
        r = sub(_diff(e.args[0], name, memo), _diff(e.args[1], name, memo))
    elif op == "mul":
        a, b = e.args
        r = add(mul(_diff(a, name, memo), b), mul(a, _diff(b, name, memo)))
    elif op == "div":
        a, b = e.args
        da, db = _diff(a, name, memo), _diff(b, name, memo)
        r = sub(div(da, b), div(mul(a, db), power(b, 2)))
    elif op == "neg":
        r = neg(_diff(e.args[0], name, memo))
    elif op == "pow":
        a = e.args[0]
        c = e.value
        r = mul(mul(const(float(c)), power(a, c - 1)), _diff(a, name, memo))
    elif op == "sin":
        r = mul(cos(e.args[0]), _diff(e.args[0], name, memo))
    elif op == "cos":
        r = neg(mul(sin(e.args[0]), _diff(e.args[0], name, memo)))
    elif op == "sqrt":
        r = div(_diff(e.args[0], name, memo), mul(const(2.0), e))
    elif op == "exp":
        r = mul(e, _diff(e.args[0], name, memo))
    elif op == "atan2":
        y, x = e.args
        dy, dx = _diff(y, name, memo), _diff(x, name, memo)
        r = div(sub(mul(x, dy), mul(y, dx)), add(power(x, 2), power(y, 2)))
    else:  # pragma: no cover
        raise AssertionError(op)
    memo[e] = r
    return r


def rebuild(e: Expr, args: Sequence[Expr]) -> Expr:
    op = e.op
    if op in _BINARY:
        return {"add": add, "sub": sub, "mul": mul, "div": div}[op](*args)
    if op == "neg":
        return neg(args[0])
    if op == "pow":
        return power(args[0], e.value)
    return func(op, *args)


def substitute(e: Expr, mapping: Mapping[str, Expr], _memo: dict | None = None) -> Expr:
    """Replace variables by expressions (simultaneous substitution)."""
    memo = {} if _memo is None else _memo
    if not (e.free_vars & mapping.keys()):
        return e
    hit = memo.get(e)
    if hit is not None:
        return hit
    if e.op == "var":
        r = mapping[e.value]
    else:
        r = rebuild(e, [substitute(a, mapping, memo) for a in e.args])
    memo[e] = r
    return r


def walk(e: Expr):
    """Yield every distinct node of the DAG once (post-order)."""
    seen = set()
    stack = [(e, False)]
    while stack:
        node, done = stack.pop()
        if done:
            yield node
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for a in reversed(node.args):
            stack.append((a, False))


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _fmt_const(v: float) -> str:
    s = repr(v)
    return f"({s})" if v < 0 else s


def _fmt_exponent(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator) if c > 0 else f"({c.numerator})"
    return f"({c.numerator}/{c.denominator})"


def to_text(e: Expr) -> str:
    """Serialize to a fully parenthesized string that re-parses to ``e``."""
    memo: dict = {}
    for node in walk(e):
        op = node.op
        if op == "const":
            s = _fmt_const(node.value)
        elif op == "var":
            s = node.value
        elif op in _BINARY:
            s = f"({memo[node.args[0]]} {_BINARY[op]} {memo[node.args[1]]})"
        elif op == "neg":
            s = f"(-{memo[node.args[0]]})"
        elif op == "pow":
            base = memo[node.args[0]]
            if node.args[0].op == "pow":
                base = f"({base})"
            s = f"{base}^{_fmt_exponent(node.value)}"
        else:
            s = f"{op}({', '.join(memo[a] for a in node.args)})"
        memo[node] = s
    return memo[e]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text: str, symbols: Iterable[str] | None):
        self.text = text
        self.symbols = None if symbols is None else frozenset(symbols)
        self.tokens = self._tokenize()
        self.i = 0

    def _byte(self, char_index: int) -> int:
        return len(self.text[:char_index].encode("utf-8"))

    def error(self, cls, msg, char_index):
        return cls(msg, self._byte(char_index), self.text)

    def _tokenize(self):
        toks = []
        pos = 0
        text = self.text
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise self.error(ExpressionError, f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            start = m.start(kind)
            toks.append((kind, m.group(kind), start))
            pos = m.end()
        toks.append(("end", "", len(text)))
        return toks

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind != "op":
            what = "end of input" if kind == "end" else repr(val)
            raise self.error(ExpressionError, f"expected {value!r}, found {what}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise self.error(ExpressionError, f"unexpected {val!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, o, _ = self.take()
            rhs = self.term()
            e = add(e, rhs) if o == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, o, _ = self.take()
            rhs = self.unary()
            e = mul(e, rhs) if o == "*" else div(e, rhs)
        return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return power(base, self.exponent())
        return base

    def _signed_number(self):
        kind, val, pos = self.take()
        sign = 1
        if kind == "op" and val == "-":
            sign = -1
            kind, val, pos = self.take()
        if kind != "num":
            raise self.error(NonRationalExponentError,
                             "exponent must be a rational literal", pos)
        return sign * Fraction(val)

    def exponent(self) -> Fraction:
        kind, val, pos = self.peek()
        if kind == "op" and val == "(":
            self.take()
            num = self._signed_number()
            kind, val, p2 = self.peek()
            if kind == "op" and val == "/":
                self.take()
                den = self._signed_number()
                if den == 0:
                    raise self.error(NonRationalExponentError, "zero denominator in exponent", p2)
                num = num / den
            kind, val, p3 = self.peek()
            if not (kind == "op" and val == ")"):
                raise self.error(NonRationalExponentError,
                                 "exponent must be a rational literal", p3)
            self.take()
            return num
        return self._signed_number()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "id":
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise self.error(ExpressionError,
                                     f"{val} takes {FUNCTIONS[val]} argument(s)", pos)
                return func(val, *args)
            if self.symbols is not None and val not in self.symbols:
                raise self.error(UnknownIdentifierError, f"unknown identifier {val!r}", pos)
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                raise self.error(UnknownIdentifierError, f"unknown function {val!r}", pos)
            return var(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(val)
        raise self.error(ExpressionError, f"unexpected {what}", pos)


def parse(text: str, symbols: Iterable[str] | None = None) -> Expr:
    """Parse ``text``; identifiers must belong to ``symbols`` when given."""
    return _Parser(text, symbols).parse()


def parse_text_unchecked(text: str) -> Expr:
    return parse(text, None)


# ---------------------------------------------------------------------------
# tapes: flat SSA programs consumed by the kernels
# ---------------------------------------------------------------------------

OPCODES = {
    "const": 0, "var": 1, "add": 2, "sub": 3, "mul": 4, "div": 5, "neg": 6,
    "pow": 7, "sin": 8, "cos": 9, "sqrt": 10, "exp": 11, "atan2": 12,
}


class Tape:
    """Straight-line program computing several outputs of a shared DAG.

    Instruction ``k`` writes register ``k``.  ``a``/``b`` are operand
    registers (or the variable index for ``var``), ``c`` holds constants and
    exponents.
    """

    def __init__(self, outputs: Sequence[Expr], varnames: Sequence[str]):
        self.varnames = tuple(varnames)
        index = {n: i for i, n in enumerate(self.varnames)}
        slot: dict = {}
        ops, aa, bb, cc = [], [], [], []
        for root in outputs:
            for node in walk(root):
                if node in slot:
                    continue
                op = node.op
                a = b = 0
                c = 0.0
                if op == "const":
                    c = node.value
                elif op == "var":
                    if node.value not in index:
                        raise UnknownIdentifierError(f"unbound variable {node.value!r}")
                    a = index[node.value]
                elif op == "pow":
                    a = slot[node.args[0]]
                    c = float(node.value)
                else:
                    a = slot[node.args[0]]
                    if len(node.args) > 1:
                        b = slot[node.args[1]]
                slot[node] = len(ops)
                ops.append(OPCODES[op])
                aa.append(a)
                bb.append(b)
                cc.append(c)
        self.ops = np.asarray(ops, dtype=np.int32)
        self.a = np.asarray(aa, dtype=np.int32)
        self.b = np.asarray(bb, dtype=np.int32)
        self.c = np.asarray(cc, dtype=np.float64)
        self.outs = np.asarray([slot[o] for o in outputs], dtype=np.int32)
        self.nvars = len(self.varnames)
        self.nout = len(outputs)
        self._scalar = None
        self._vector = None

    def __len__(self):
        return len(self.ops)

    def python_source(self) -> str:
        inv = {v: k for k, v in OPCODES.items()}
        lines = ["def _tape(x):"]
        for k, (op, a, b, c) in enumerate(zip(self.ops, self.a, self.b, self.c)):
            name = inv[int(op)]
            if name == "const":
                rhs = repr(float(c))
            elif name == "var":
                rhs = f"x[{a}]"
            elif name in _BINARY:
                rhs = f"r{a} {_BINARY[name]} r{b}"
            elif name == "neg":
                rhs = f"-r{a}"
            elif name == "pow":
                rhs = f"pw(r{a}, {float(c)!r})"
            elif name == "atan2":
                rhs = f"at2(r{a}, r{b})"
            else:
                rhs = f"{name}(r{a})"
            lines.append(f"    r{k} = {rhs}")
        lines.append("    return (" + "".join(f"r{o}, " for o in self.outs) + ")")
        return "\n".join(lines)

    def _build(self, namespace: dict):
        ns = dict(namespace)
        exec(compile(self.python_source(), "<tape>", "exec"), ns)
        return ns["_tape"]

    @property
    def scalar_fn(self):
        """Plain-Python evaluator; raises on domain errors."""
        if self._scalar is None:
            self._scalar = self._build(_SCALAR_NS)
        return self._scalar

    @property
    def vector_fn(self):
        """NumPy evaluator over columns ``x[i]``; domain errors give nan/inf."""
        if self._vector is None:
            self._vector = self._build(_VECTOR_NS)
        return self._vector


def _atan2_scalar(y, x):
    if y == 0.0 and x == 0.0:
        raise ValueError("atan2(0, 0)")
    return math.atan2(y, x)


def _atan2_vector(y, x):
    r = np.arctan2(y, x)
    return np.where((np.asarray(y) == 0.0) & (np.asarray(x) == 0.0), np.nan, r)


_SCALAR_NS = {
    "sin": math.sin, "cos": math.cos, "sqrt": math.sqrt, "exp": math.exp,
    "pw": math.pow, "at2": _atan2_scalar,
}
_VECTOR_NS = {
    "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt, "exp": np.exp,
    "pw": np.power, "at2": _atan2_vector,
}

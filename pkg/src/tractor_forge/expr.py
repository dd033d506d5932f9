"""A small real-valued expression language with exact symbolic derivatives.

Grammar (highest precedence first)::

    atom   := number | variable | func "(" expr ")" | "(" expr ")"
    power  := atom [ "^" unary ]           right associative
    unary  := "-" unary | power
    term   := unary { ("*" | "/") unary }
    expr   := term { ("+" | "-") term }

Variables are ``x1 .. xn`` (chart coordinates) and the reserved names ``t``,
``r`` (ambient coordinates) and ``s`` (curve parameter).  Functions are
``sin cos exp log sqrt tanh``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError

__all__ = [
    "Expr", "Num", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "FUNCTIONS", "RESERVED", "parse", "render", "evaluate", "differentiate",
    "simplify", "free_vars", "lambdify", "as_expr", "var_name",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
RESERVED = ("t", "r", "s")

Number = Union[int, float]


class Expr:
    """Base class of all expression nodes.  Nodes are immutable and hashable."""

    __slots__ = ()
    precedence = 5

    def __str__(self) -> str:
        return render(self)

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def children(self) -> tuple:
        return ()


def _node(cls):
    """Frozen dataclass with a cached structural hash (trees get deep)."""
    cls = dataclass(frozen=True, repr=False)(cls)
    names = [f.name for f in cls.__dataclass_fields__.values() if f.compare]
    original_init = cls.__init__

    def __init__(self, *args, **kwargs):
        original_init(self, *args, **kwargs)
        key = (cls.__name__,) + tuple(getattr(self, n) for n in names)
        object.__setattr__(self, "_hash", hash(key))

    cls.__init__ = __init__
    cls.__hash__ = lambda self: self._hash
    return cls


@_node
class Num(Expr):
    value: float
    _hash: int = field(default=0, init=False, compare=False)

    def __repr__(self):
        return _format_number(self.value)


@_node
class Var(Expr):
    name: str
    _hash: int = field(default=0, init=False, compare=False)

    def __repr__(self):
        return self.name


@_node
class Neg(Expr):
    arg: Expr
    _hash: int = field(default=0, init=False, compare=False)
    precedence = 3

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"Neg({self.arg!r})"


class _Binary(Expr):
    __slots__ = ()
    symbol = "?"

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"{type(self).__name__}({self.left!r}, {self.right!r})"


@_node
class Add(_Binary):
    left: Expr
    right: Expr
    _hash: int = field(default=0, init=False, compare=False)
    precedence = 1
    symbol = "+"


@_node
class Sub(_Binary):
    left: Expr
    right: Expr
    _hash: int = field(default=0, init=False, compare=False)
    precedence = 1
    symbol = "-"


@_node
class Mul(_Binary):
    left: Expr
    right: Expr
    _hash: int = field(default=0, init=False, compare=False)
    precedence = 2
    symbol = "*"


@_node
class Div(_Binary):
    left: Expr
    right: Expr
    _hash: int = field(default=0, init=False, compare=False)
    precedence = 2
    symbol = "/"


@_node
class Pow(_Binary):
    left: Expr
    right: Expr
    _hash: int = field(default=0, init=False, compare=False)
    precedence = 4
    symbol = "^"


@_node
class Call(Expr):
    func: str
    arg: Expr
    _hash: int = field(default=0, init=False, compare=False)

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"{self.func}({self.arg!r})"


ZERO = Num(0.0)
ONE = Num(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Num(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def var_name(var: int | str) -> str:
    if isinstance(var, (int, np.integer)):
        if var < 1:
            raise ValueError(f"coordinate index must be >= 1, got {var}")
        return f"x{int(var)}"
    if var in RESERVED or _is_coordinate(var):
        return var
    raise ValueError(f"unknown variable {var!r}")


def _is_coordinate(name: str) -> bool:
    return re.fullmatch(r"x[1-9][0-9]*", name) is not None


# ---------------------------------------------------------------- parsing

_NUMBER_START = re.compile(r"[0-9]|\.[0-9]")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        # byte offset of each character index (plus one for end of input)
        self._byte = [0]
        for ch in text:
            self._byte.append(self._byte[-1] + len(ch.encode("utf-8")))

    def error(self, message: str, pos: int | None = None):
        pos = self.pos if pos is None else pos
        raise ExprSyntaxError(message, self._byte[pos], self.text)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            if self.pos >= len(self.text):
                self.error(f"expected '{ch}' but reached end of input")
            self.error(f"expected '{ch}', found '{self.text[self.pos]}'")
        self.pos += 1

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek():
            self.error(f"unexpected '{self.text[self.pos]}'")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek() == "-":
            self.pos += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            return Pow(base, self.unary())
        return base

    def atom(self) -> Expr:
        ch = self.peek()
        if not ch:
            self.error("unexpected end of input")
        if ch == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        if _NUMBER_START.match(self.text, self.pos):
            return self.number()
        m = _IDENT.match(self.text, self.pos)
        if m:
            name, start = m.group(), self.pos
            self.pos = m.end()
            if name in FUNCTIONS:
                if self.peek() != "(":
                    self.error(f"function '{name}' requires an argument list")
                self.pos += 1
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            if name in RESERVED or _is_coordinate(name):
                return Var(name)
            self.error(f"unknown identifier '{name}'", start)
        self.error(f"unexpected '{ch}'")

    def number(self) -> Num:
        text, start = self.text, self.pos
        i = start
        while i < len(text) and (text[i].isdigit() or text[i] == "."):
            i += 1
        if i < len(text) and text[i] in "eE":
            i += 1
            if i < len(text) and text[i] in "+-":
                i += 1
            exp_start = i
            while i < len(text) and text[i].isdigit():
                i += 1
            if i == exp_start:
                self.error("malformed number: missing exponent digits", start)
        if i < len(text) and (text[i].isalnum() or text[i] in "._"):
            self.error("malformed number", start)
        literal = text[start:i]
        if literal.count(".") > 1:
            self.error("malformed number", start)
        self.pos = i
        return Num(float(literal))


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises :class:`ExprSyntaxError` carrying the UTF-8 byte offset of the
    problem (end of input for unbalanced parentheses).
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------- rendering

def _format_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _prec(e: Expr) -> int:
    if isinstance(e, Num) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return e.precedence


def render(e: Expr) -> str:
    """Render with minimal parentheses; ``parse(render(e))`` evaluates identically."""
    if isinstance(e, Num):
        return _format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({render(e.arg)})"
    if isinstance(e, Neg):
        inner = render(e.arg)
        return f"-({inner})" if _prec(e.arg) < 3 else f"-{inner}"
    if isinstance(e, Pow):
        b, x = render(e.left), render(e.right)
        if _prec(e.left) <= 4:
            b = f"({b})"
        if _prec(e.right) < 3:
            x = f"({x})"
        return f"{b}^{x}"
    p = e.precedence
    lhs, rhs = render(e.left), render(e.right)
    if _prec(e.left) < p:
        lhs = f"({lhs})"
    if _prec(e.right) <= p:
        rhs = f"({rhs})"
    return f"{lhs} {e.symbol} {rhs}"


# ---------------------------------------------------------------- evaluation

def _bind(point) -> dict:
    if isinstance(point, Mapping):
        return {k: float(v) for k, v in point.items()}
    return {f"x{i + 1}": float(v) for i, v in enumerate(np.ravel(point))}


def _pow_checked(a: float, b: float, node, env) -> float:
    if a < 0 and not float(b).is_integer():
        raise DomainError("negative base with non-integer exponent", node, env)
    if a == 0 and b < 0:
        raise DomainError("zero raised to a negative power", node, env)
    try:
        return math.pow(a, b)
    except OverflowError:
        raise DomainError("overflow", node, env) from None


def _eval(e: Expr, env: dict) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise KeyError(f"no value supplied for variable {e.name}") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Call):
        a = _eval(e.arg, env)
        f = e.func
        if f == "log" and a <= 0:
            raise DomainError("log of non-positive value", e, env)
        if f == "sqrt" and a < 0:
            raise DomainError("sqrt of negative value", e, env)
        try:
            return getattr(math, f)(a)
        except OverflowError:
            raise DomainError("overflow", e, env) from None
    a, b = _eval(e.left, env), _eval(e.right, env)
    if isinstance(e, Add):
        v = a + b
    elif isinstance(e, Sub):
        v = a - b
    elif isinstance(e, Mul):
        v = a * b
    elif isinstance(e, Div):
        if b == 0:
            raise DomainError("division by zero", e, env)
        v = a / b
    else:
        v = _pow_checked(a, b, e, env)
    if not math.isfinite(v):
        raise DomainError("non-finite result", e, env)
    return v


def evaluate(e: Expr, point) -> float:
    """Evaluate at ``point``: a sequence (x1, x2, ...) or a name -> value mapping."""
    return _eval(e, _bind(point))


# ---------------------------------------------------------------- simplification

def _num(e: Expr):
    return e.value if isinstance(e, Num) else None


def _fold(fn, *args) -> Expr | None:
    try:
        v = fn(*args)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    return Num(float(v)) if math.isfinite(v) else None


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None:
        return _fold(lambda p, q: p + q, va, vb) or Add(a, b)
    if va == 0:
        return b
    if vb == 0:
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None:
        return _fold(lambda p, q: p - q, va, vb) or Sub(a, b)
    if vb == 0:
        return a
    if va == 0:
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None:
        return _fold(lambda p, q: p * q, va, vb) or Mul(a, b)
    if va == 0 or vb == 0:
        return ZERO
    if va == 1:
        return b
    if vb == 1:
        return a
    if va == -1:
        return neg(b)
    if vb == -1:
        return neg(a)
    if vb is not None:
        a, b, va, vb = b, a, vb, va
    if va is not None and isinstance(b, Mul) and isinstance(b.left, Num):
        c = _fold(lambda p, q: p * q, va, b.left.value)
        if c is not None:
            return mul(c, b.right)
    if isinstance(a, Neg) and isinstance(b, Neg):
        return mul(a.arg, b.arg)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None and vb != 0:
        return _fold(lambda p, q: p / q, va, vb) or Div(a, b)
    if vb == 1:
        return a
    if va == 0 and vb is None:
        return ZERO
    return Div(a, b)


def power(a: Expr, b: Expr) -> Expr:
    va, vb = _num(a), _num(b)
    if vb == 0:
        return ONE
    if vb == 1:
        return a
    if va == 1:
        return ONE
    if va is not None and vb is not None:
        if va < 0 and not vb.is_integer():
            return Pow(a, b)
        return _fold(math.pow, va, vb) or Pow(a, b)
    return Pow(a, b)


def call(func: str, a: Expr) -> Expr:
    va = _num(a)
    if va is not None:
        folded = _fold(getattr(math, func), va)
        if folded is not None:
            return folded
    return Call(func, a)


_BUILD = {Add: add, Sub: sub, Mul: mul, Div: div, Pow: power}


def simplify(e: Expr) -> Expr:
    """Bottom-up local rewrites: constant folding and 0/1 absorption."""
    if isinstance(e, (Num, Var)):
        return e
    if isinstance(e, Neg):
        return neg(simplify(e.arg))
    if isinstance(e, Call):
        return call(e.func, simplify(e.arg))
    return _BUILD[type(e)](simplify(e.left), simplify(e.right))


# ---------------------------------------------------------------- differentiation

def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    out = frozenset()
    for c in e.children():
        out |= free_vars(c)
    return out


def differentiate(e: Expr, var: int | str) -> Expr:
    """Exact partial derivative with respect to ``var`` (index or name)."""
    name = var_name(var)
    return _diff(simplify(e), name, {})


def _diff(e: Expr, v: str, memo: dict) -> Expr:
    hit = memo.get(e)
    if hit is not None:
        return hit
    out = _diff_rule(e, v, memo)
    memo[e] = out
    return out


def _diff_rule(e: Expr, v: str, memo: dict) -> Expr:
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v, memo))
    if isinstance(e, Call):
        a = e.arg
        da = _diff(a, v, memo)
        if da == ZERO:
            return ZERO
        f = e.func
        if f == "sin":
            inner = call("cos", a)
        elif f == "cos":
            inner = neg(call("sin", a))
        elif f == "exp":
            inner = e
        elif f == "log":
            return div(da, a)
        elif f == "sqrt":
            return div(da, mul(Num(2.0), e))
        else:  # tanh
            inner = sub(ONE, power(e, Num(2.0)))
        return mul(inner, da)
    a, b = e.left, e.right
    da, db = _diff(a, v, memo), _diff(b, v, memo)
    if isinstance(e, Add):
        return add(da, db)
    if isinstance(e, Sub):
        return sub(da, db)
    if isinstance(e, Mul):
        return add(mul(da, b), mul(a, db))
    if isinstance(e, Div):
        if db == ZERO:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
    # Pow
    if db == ZERO:
        if da == ZERO:
            return ZERO
        return mul(mul(b, power(a, sub(b, ONE))), da)
    # general exponent: a^b (b' log a + b a'/a), needs a > 0
    term = mul(db, call("log", a))
    if da != ZERO:
        term = add(term, div(mul(b, da), a))
    return mul(e, term)


# ---------------------------------------------------------------- compilation

_MATH = {"sin": "math.sin", "cos": "math.cos", "exp": "math.exp", "log": "math.log",
         "sqrt": "math.sqrt", "tanh": "math.tanh", "pow": "math.pow"}
_NUMPY = {"sin": "np.sin", "cos": "np.cos", "exp": "np.exp", "log": "np.log",
          "sqrt": "np.sqrt", "tanh": "np.tanh", "pow": "np.power"}


def _codegen(exprs: Sequence[Expr], table: dict) -> tuple[list[str], list[str]]:
    """Straight-line code with common-subexpression sharing."""
    memo: dict = {}
    lines: list[str] = []

    def emit(e: Expr) -> str:
        hit = memo.get(e)
        if hit is not None:
            return hit
        if isinstance(e, Num):
            s = repr(float(e.value))
            s = f"({s})" if e.value < 0 else s
            return s
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Neg):
            code = f"-{emit(e.arg)}"
        elif isinstance(e, Call):
            code = f"{table[e.func]}({emit(e.arg)})"
        elif isinstance(e, Pow):
            base = emit(e.left)
            k = _num(e.right)
            if k is not None and k.is_integer() and abs(k) <= 64:
                code = f"{base} ** {int(k)}"
            else:
                code = f"{table['pow']}({base}, {emit(e.right)})"
        else:
            code = f"{emit(e.left)} {'/' if isinstance(e, Div) else e.symbol} {emit(e.right)}"
        name = f"_t{len(lines)}"
        lines.append(f"    {name} = {code}")
        memo[e] = name
        return name

    results = [emit(e) for e in exprs]
    return lines, results


class Compiled:
    """Fast evaluator for a fixed list of expressions.

    Call with a mapping of variable name to float or array; returns an array
    of shape ``broadcast(inputs) + (len(exprs),)``.  Non-finite results are
    re-evaluated node by node so the offending node is named in the
    :class:`DomainError`.
    """

    def __init__(self, exprs: Iterable[Expr]):
        self.exprs = tuple(exprs)
        self.names = sorted(set().union(*[free_vars(e) for e in self.exprs])) if self.exprs else []
        self._scalar = self._build(_MATH)
        self._vector = self._build(_NUMPY)

    def _build(self, table) -> Callable:
        lines, results = _codegen(self.exprs, table)
        head = [f"    {n} = env[{n!r}]" for n in self.names]
        src = "def _f(env):\n" + "\n".join(head + lines + [f"    return ({', '.join(results)},)"]) + "\n"
        ns = {"math": math, "np": np}
        exec(compile(src, "<expr>", "exec"), ns)
        return ns["_f"]

    def __len__(self):
        return len(self.exprs)

    def __call__(self, env: Mapping) -> np.ndarray:
        missing = [n for n in self.names if n not in env]
        if missing:
            raise KeyError(f"no value supplied for variables {missing}")
        shape = np.broadcast_shapes(*[np.shape(v) for v in env.values()]) if env else ()
        if shape == ():
            scalars = {k: float(v) for k, v in env.items()}
            try:
                vals = self._scalar(scalars)
            except (ValueError, ZeroDivisionError, OverflowError):
                self._diagnose(scalars)
                raise DomainError("evaluation failed", None, scalars) from None
            out = np.array(vals, dtype=float)
            if not np.isfinite(out).all():
                self._diagnose(scalars)
                raise DomainError("non-finite result", None, scalars)
            return out
        arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        with np.errstate(all="ignore"):
            vals = self._vector(arrays)
        out = np.empty(shape + (len(self.exprs),))
        for j, v in enumerate(vals):
            out[..., j] = v
        if not np.isfinite(out).all():
            bad = np.argwhere(~np.isfinite(out))[0][:-1]
            point = {k: float(np.broadcast_to(a, shape)[tuple(bad)]) for k, a in arrays.items()}
            self._diagnose(point)
            raise DomainError("non-finite result", None, point)
        return out

    def _diagnose(self, env: dict):
        for e in self.exprs:
            _eval(e, env)


def lambdify(exprs: Iterable[Expr]) -> Compiled:
    return Compiled(exprs)

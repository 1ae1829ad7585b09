"""Scalar expression language for state-dependent matrix entries and basis functions.

Expressions are built over state variables ``x1..xn`` with the grammar

    expr   := term  (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' UINT)?
    atom   := NUMBER | FUNC '(' expr ')' | VAR | '(' expr ')'
    VAR    := 'x' UINT          (1-based index)
    FUNC   := sin | cos | tan | exp | abs | sinc

``sinc`` is sin(x)/x with sinc(0) = 1, kept as a dedicated node so the 0/0
pole never appears.

Two bounding modes are provided for a ball B_r:

* ``interval``: interval arithmetic over the enclosing box [-r, r]^n.  Sound
  (the returned interval contains the exact range over the ball), possibly
  loose.  Monotone nodes use endpoint evaluation; sin/cos/tan/sinc use
  critical-point analysis on the interval.
* ``grid``: min/max over a dense sample of the ball, optionally inflated by a
  relative margin.  Tighter but not sound; diagnostics only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Interval",
    "Expr",
    "DomainError",
    "ExprSyntaxError",
    "parse",
    "to_source",
    "evaluate",
    "bound_over_box",
    "bound_over_ball",
]

_FUNCS = ("sin", "cos", "tan", "exp", "abs", "sinc")

_PI = math.pi
_HALF_PI = math.pi / 2.0


class DomainError(ValueError):
    """Evaluation or bounding left the expression's domain (tan pole, x/0)."""


class ExprSyntaxError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def is_point(self, tol: float = 1e-12) -> bool:
        return self.hi - self.lo <= tol

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= value <= self.hi + slack

    def encloses(self, other: "Interval", slack: float = 0.0) -> bool:
        return self.lo - slack <= other.lo and other.hi <= self.hi + slack

    @staticmethod
    def point(v: float) -> "Interval":
        return Interval(v, v)

    @staticmethod
    def hull(values) -> "Interval":
        return Interval(min(values), max(values))


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Expr:
    """Base class of all expression nodes; nodes are immutable."""

    def variables(self) -> frozenset:
        """0-based indices of the state variables this expression reads."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({to_source(self)!r})"


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: float

    def variables(self):
        return frozenset()


@dataclass(frozen=True, repr=False)
class Var(Expr):
    index: int  # 0-based

    def variables(self):
        return frozenset((self.index,))


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    arg: Expr

    def variables(self):
        return self.arg.variables()


@dataclass(frozen=True, repr=False)
class BinOp(Expr):
    op: str  # '+', '-', '*', '/'
    left: Expr
    right: Expr

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True, repr=False)
class Pow(Expr):
    base: Expr
    exponent: int  # non-negative integer

    def variables(self):
        return self.base.variables()


@dataclass(frozen=True, repr=False)
class Call(Expr):
    func: str  # one of _FUNCS
    arg: Expr

    def variables(self):
        return self.arg.variables()


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^(),":
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {text!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ExprSyntaxError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected trailing input {tok[1]!r}", tok[2])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.next()[0]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.next()[0]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "^":
            self.next()
            tok = self.next()
            neg = False
            if tok[0] == "-":
                neg, tok = True, self.next()
            if tok[0] != "num" or tok[1] != int(tok[1]) or neg:
                raise ExprSyntaxError("exponent must be a non-negative integer", tok[2])
            return Pow(base, int(tok[1]))
        return base

    def atom(self) -> Expr:
        tok = self.next()
        kind, value, pos = tok
        if kind == "num":
            return Const(value)
        if kind == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if self.peek()[0] == "(":
                if value not in _FUNCS:
                    raise ExprSyntaxError(f"unknown function {value!r}", pos)
                self.next()
                arg = self.expr()
                if self.peek()[0] == ",":
                    raise ExprSyntaxError(f"{value} takes exactly one argument", pos)
                self.expect(")")
                return Call(value, arg)
            idx = _var_index(value)
            if idx is None:
                raise ExprSyntaxError(f"unknown identifier {value!r}", pos)
            return Var(idx)
        raise ExprSyntaxError(f"unexpected token {value!r}", pos)


def _var_index(name: str):
    if len(name) >= 2 and name[0] == "x" and name[1:].isdigit():
        k = int(name[1:])
        if k >= 1:
            return k - 1
    return None


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Printing (parse(to_source(e)) evaluates identically to e)
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def to_source(e: Expr) -> str:
    text, _ = _print(e)
    return text


def _print(e: Expr):
    if isinstance(e, Const):
        if e.value < 0:
            return repr(e.value), _PREC["neg"]
        return repr(e.value), _PREC["atom"]
    if isinstance(e, Var):
        return f"x{e.index + 1}", _PREC["atom"]
    if isinstance(e, Neg):
        inner, prec = _print(e.arg)
        if prec < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}", _PREC["neg"]
    if isinstance(e, BinOp):
        lp = _PREC[e.op]
        left, lprec = _print(e.left)
        right, rprec = _print(e.right)
        if lprec < lp:
            left = f"({left})"
        # '-' and '/' are left-associative: parenthesize equal-precedence rhs
        if rprec < lp or (rprec == lp and e.op in ("-", "/")):
            right = f"({right})"
        return f"{left} {e.op} {right}", lp
    if isinstance(e, Pow):
        base, prec = _print(e.base)
        if prec < _PREC["^"]:
            base = f"({base})"
        return f"{base}^{e.exponent}", _PREC["^"]
    if isinstance(e, Call):
        return f"{e.func}({_print(e.arg)[0]})", _PREC["atom"]
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation (scalar or vectorized over a (n, N) batch of states)
# ---------------------------------------------------------------------------


def _sinc(t):
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 1e-6
    safe = np.where(small, 1.0, t)
    out = np.where(small, 1.0 - t * t / 6.0, np.sin(safe) / safe)
    return out if out.ndim else float(out)


def evaluate(e: Expr, x) -> float:
    """Evaluate ``e`` at state ``x`` (shape (n,) or (n, N) for a batch)."""
    x = np.asarray(x, dtype=float)
    return _eval(e, x)


def _eval(e, x):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.index >= x.shape[0]:
            raise DomainError(
                f"expression reads x{e.index + 1} but the state has dimension {x.shape[0]}"
            )
        v = x[e.index]
        return float(v) if np.ndim(v) == 0 else v
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, BinOp):
        a, b = _eval(e.left, x), _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0.0):
            raise DomainError(f"division by zero in {to_source(e)!r}")
        return a / b
    if isinstance(e, Pow):
        return _eval(e.base, x) ** e.exponent
    if isinstance(e, Call):
        a = _eval(e.arg, x)
        if e.func == "sin":
            return np.sin(a) if np.ndim(a) else math.sin(a)
        if e.func == "cos":
            return np.cos(a) if np.ndim(a) else math.cos(a)
        if e.func == "tan":
            c = np.cos(a)
            if np.any(np.abs(np.asarray(c)) < 1e-15):
                raise DomainError(f"tan evaluated at a pole in {to_source(e)!r}")
            return np.tan(a) if np.ndim(a) else math.tan(a)
        if e.func == "exp":
            return np.exp(a) if np.ndim(a) else math.exp(a)
        if e.func == "abs":
            return np.abs(a) if np.ndim(a) else abs(a)
        if e.func == "sinc":
            return _sinc(a)
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Interval bounds
# ---------------------------------------------------------------------------


def bound_over_box(e: Expr, box) -> Interval:
    """Sound enclosure of {e(x) : x in the axis-aligned box}.

    ``box`` is a sequence of per-axis Intervals.  Raises DomainError when the
    box touches a singularity (tan pole, zero denominator).
    """
    box = [b if isinstance(b, Interval) else Interval(*b) for b in box]
    if not box:
        raise ValueError("box must have at least one axis")
    return _bound(e, box)


def _bound(e, box):
    if isinstance(e, Const):
        return Interval.point(e.value)
    if isinstance(e, Var):
        if e.index >= len(box):
            raise DomainError(
                f"expression reads x{e.index + 1} but the box has {len(box)} axes"
            )
        return box[e.index]
    if isinstance(e, Neg):
        i = _bound(e.arg, box)
        return Interval(-i.hi, -i.lo)
    if isinstance(e, BinOp):
        a, b = _bound(e.left, box), _bound(e.right, box)
        if e.op == "+":
            return Interval(a.lo + b.lo, a.hi + b.hi)
        if e.op == "-":
            return Interval(a.lo - b.hi, a.hi - b.lo)
        if e.op == "*":
            return Interval.hull(
                (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
            )
        if b.lo <= 0.0 <= b.hi:
            raise DomainError(
                f"denominator interval [{b.lo}, {b.hi}] contains zero in {to_source(e)!r}"
            )
        recip = Interval(1.0 / b.hi, 1.0 / b.lo)
        return Interval.hull(
            (a.lo * recip.lo, a.lo * recip.hi, a.hi * recip.lo, a.hi * recip.hi)
        )
    if isinstance(e, Pow):
        a = _bound(e.base, box)
        k = e.exponent
        if k == 0:
            return Interval.point(1.0)
        if k % 2 == 1:
            return Interval(a.lo**k, a.hi**k)
        hi = max(abs(a.lo), abs(a.hi)) ** k
        lo = 0.0 if a.lo <= 0.0 <= a.hi else min(abs(a.lo), abs(a.hi)) ** k
        return Interval(lo, hi)
    if isinstance(e, Call):
        a = _bound(e.arg, box)
        return _bound_call(e, a)
    raise TypeError(f"not an Expr: {e!r}")


def _contains_multiple(lo, hi, base, period):
    """True iff some base + k*period (integer k) lies in [lo, hi]."""
    return math.ceil((lo - base) / period - 1e-12) <= math.floor(
        (hi - base) / period + 1e-12
    )


def _bound_call(e, a):
    lo, hi = a.lo, a.hi
    if e.func == "exp":
        return Interval(math.exp(lo), math.exp(hi))
    if e.func == "abs":
        top = max(abs(lo), abs(hi))
        bot = 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi))
        return Interval(bot, top)
    if e.func == "sin":
        vals = [math.sin(lo), math.sin(hi)]
        if _contains_multiple(lo, hi, _HALF_PI, 2 * _PI):
            vals.append(1.0)
        if _contains_multiple(lo, hi, -_HALF_PI, 2 * _PI):
            vals.append(-1.0)
        return Interval.hull(vals)
    if e.func == "cos":
        vals = [math.cos(lo), math.cos(hi)]
        if _contains_multiple(lo, hi, 0.0, 2 * _PI):
            vals.append(1.0)
        if _contains_multiple(lo, hi, _PI, 2 * _PI):
            vals.append(-1.0)
        return Interval.hull(vals)
    if e.func == "tan":
        if _contains_multiple(lo, hi, _HALF_PI, _PI):
            raise DomainError(
                f"tan interval [{lo}, {hi}] crosses a pole in {to_source(e)!r}"
            )
        return Interval(math.tan(lo), math.tan(hi))
    if e.func == "sinc":
        return _bound_sinc(lo, hi)
    raise TypeError(f"unknown function {e.func!r}")


def _bound_sinc(lo, hi):
    # sinc is even: reduce to |t| in [tlo, thi] and analyze on [0, inf).
    if lo <= 0.0 <= hi:
        tlo, thi = 0.0, max(abs(lo), abs(hi))
    else:
        tlo, thi = min(abs(lo), abs(hi)), max(abs(lo), abs(hi))
    vals = [float(_sinc(tlo)), float(_sinc(thi))]
    # interior extrema solve tan t = t, i.e. g(t) = sin t - t cos t = 0,
    # one root in each window (k*pi, k*pi + pi/2) for k >= 1
    g = lambda t: math.sin(t) - t * math.cos(t)
    k = max(1, int(math.floor(tlo / _PI)))
    while k * _PI < thi:
        a = max(tlo, k * _PI + 1e-12)
        b = min(thi, k * _PI + _HALF_PI - 1e-12)
        if a < b and g(a) * g(b) < 0:
            root = brentq(g, a, b, xtol=1e-13)
            vals.append(float(_sinc(root)))
        k += 1
    return Interval.hull(vals)


def _ball_grid(variables, r, samples_per_axis):
    """Grid over [-r, r]^k (k = len(variables)) filtered to the ball |x| <= r."""
    k = len(variables)
    axes = [np.linspace(-r, r, samples_per_axis)] * k
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh])
    keep = np.einsum("ij,ij->j", pts, pts) <= r * r * (1 + 1e-12)
    return pts[:, keep]


def bound_over_ball(
    e: Expr,
    r: float,
    n: int | None = None,
    mode: str = "interval",
    samples_per_axis: int = 201,
    margin: float = 0.0,
) -> Interval:
    """Bound {e(x) : |x| <= r}.

    ``interval`` mode bounds over the enclosing box [-r, r]^n, which contains
    the ball, so the result is sound.  ``grid`` mode samples the ball densely
    on the referenced axes and returns the sampled range inflated by
    ``margin`` (relative to the range width); it is tighter but not sound.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    variables = sorted(e.variables())
    if n is not None and variables and variables[-1] >= n:
        raise DomainError(
            f"expression reads x{variables[-1] + 1} but n = {n} was declared"
        )
    if r == 0 or not variables:
        v = evaluate(e, np.zeros(n if n is not None else (variables[-1] + 1 if variables else 1)))
        return Interval.point(float(v))
    if mode == "interval":
        dim = n if n is not None else variables[-1] + 1
        return bound_over_box(e, [Interval(-r, r)] * dim)
    if mode != "grid":
        raise ValueError(f"unknown mode {mode!r}")
    # grid mode: e depends only on `variables`, and the projection of the ball
    # onto those axes is the full lower-dimensional ball, so sampling it loses
    # nothing.  Cap the point count by thinning the per-axis resolution.
    k = len(variables)
    per_axis = samples_per_axis
    while per_axis**k > 2_000_000 and per_axis > 11:
        per_axis = per_axis // 2 + 1
    sub = _ball_grid(variables, r, per_axis)
    dim = n if n is not None else variables[-1] + 1
    pts = np.zeros((dim, sub.shape[1]))
    for row, idx in enumerate(variables):
        pts[idx] = sub[row]
    vals = np.asarray(evaluate(e, pts), dtype=float)
    lo, hi = float(vals.min()), float(vals.max())
    pad = margin * (hi - lo)
    return Interval(lo - pad, hi + pad)

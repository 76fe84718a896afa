"""Scalar expressions over x1..xn: parsing, printing and exact second-order jets.

The grammar is deliberately small::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' base)?
    base   := number | 'x'digits | func '(' expr ')' | '(' expr ')' | '-' base
    func   := sin | cos | exp | log | sqrt | abs

Note that unary minus binds tighter than ``^``: ``-x1^2`` is ``(-x1)^2``.

Evaluation is vectorised over a leading batch axis.  A jet of an expression
at ``m`` points is the triple ``(value (m,), gradient (m, n), hessian (m, n, n))``
propagated exactly through the tree (forward mode, second order).
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ExprSyntaxError

FUNCS = ("sin", "cos", "exp", "log", "sqrt", "abs")
UNARY_OPS = ("neg",) + FUNCS
BINARY_OPS = ("+", "-", "*", "/", "^")


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

class Expr:
    """Base class of expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self):
        return unparse(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based

    def __repr__(self):
        return f"Var({self.index})"


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")

    def __repr__(self):
        return f"Unary({self.op!r}, {self.arg!r})"


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


def variables(e: Expr) -> set[int]:
    """Indices of all variables occurring in ``e``."""
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Unary):
        return variables(e.arg)
    if isinstance(e, Binary):
        return variables(e.left) | variables(e.right)
    return set()


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"x(\d+)\Z")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text, char_pos):
    return len(text[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]))

    def accept(self, text):
        if self.tok[0] == "op" and self.tok[1] == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok[1] or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def parse(self):
        e = self.expr()
        if self.tok[0] != "end":
            raise self.error(f"unexpected token {self.tok[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.tok[1]
            self.i += 1
            e = Binary(op, e, self.term())
        return e

    def term(self):
        e = self.factor()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.tok[1]
            self.i += 1
            e = Binary(op, e, self.factor())
        return e

    def factor(self):
        e = self.base()
        if self.accept("^"):
            e = Binary("^", e, self.base())
        return e

    def base(self):
        kind, text, _ = tok = self.tok
        if kind == "num":
            self.i += 1
            return Const(float(text))
        if kind == "name":
            self.i += 1
            m = _VAR_RE.match(text)
            if m:
                index = int(m.group(1))
                if not 1 <= index <= self.dim:
                    raise self.error(f"variable {text} out of range for dim={self.dim}", tok)
                return Var(index)
            if text in FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            raise self.error(f"unknown identifier {text!r}", tok)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("-"):
            return Unary("neg", self.base())
        found = text or "end of input"
        raise self.error(f"unexpected {found!r}")


def parse(text: str, dim: int) -> Expr:
    """Parse ``text`` into an expression over ``x1..x{dim}``.

    Raises:
        ValueError: if ``dim < 2``.
        ExprSyntaxError: on malformed input or an out-of-range variable.
    """
    if dim < 2:
        raise ValueError(f"dimension must be at least 2, got {dim}")
    return _Parser(text, dim).parse()


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

def _prec(e):
    if isinstance(e, Binary):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 4
    return 5


def _fmt_const(v):
    if not math.isfinite(v):
        raise ValueError(f"cannot print non-finite constant {v}")
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def unparse(e: Expr) -> str:
    """Render ``e`` with the minimal parentheses needed to parse back to ``e``."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = unparse(e.arg)
            return "-" + (f"({inner})" if _prec(e.arg) < 4 else inner)
        return f"{e.op}({unparse(e.arg)})"
    if isinstance(e, Binary):
        p = _prec(e)
        left, right = unparse(e.left), unparse(e.right)
        if p == 3:
            if _prec(e.left) < 4:
                left = f"({left})"
            if _prec(e.right) < 4:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        sep = f" {e.op} " if p == 1 else e.op
        return f"{left}{sep}{right}"
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of a scalar expression at one point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


class _Context:
    """Per-call evaluation state: the batch, and which rows have failed."""

    def __init__(self, X, with_jets):
        self.X = X
        self.m, self.n = X.shape
        self.with_jets = with_jets
        self.bad = np.zeros(self.m, dtype=bool)
        self.errors = []  # (node, mask, argument values, reason) in evaluation order
        if with_jets:
            self.zero_g = np.zeros((self.m, self.n))
            self.zero_h = np.zeros((self.m, self.n, self.n))

    def fail(self, node, mask, arg, reason):
        new = mask & ~self.bad
        if new.any():
            self.errors.append((node, new, np.asarray(arg), reason))
            self.bad |= new

    def raise_first(self, row=0):
        for node, mask, arg, reason in self.errors:
            if mask[row]:
                value = arg[row] if arg.ndim else arg
                raise DomainError(unparse(node), float(value), reason)


@functools.lru_cache(maxsize=1024)
def _constant_value(e):
    """Value of a variable-free subtree, or None if it is not constant."""
    if variables(e):
        return None
    ctx = _Context(np.zeros((1, 1)), with_jets=False)
    with np.errstate(all="ignore"):
        v = _value(e, ctx)
    if ctx.bad[0]:
        ctx.raise_first()
    return float(v[0])


def _unary_derivs(op, u):
    """(domain_ok, f, f', f'') for the scalar function ``op`` at ``u``."""
    if op == "sin":
        s, c = np.sin(u), np.cos(u)
        return None, s, c, -s
    if op == "cos":
        s, c = np.sin(u), np.cos(u)
        return None, c, -s, -c
    if op == "exp":
        e = np.exp(u)
        return None, e, e, e
    if op == "log":
        r = 1.0 / u
        return u > 0, np.log(u), r, -r * r
    if op == "sqrt":
        s = np.sqrt(u)
        return u > 0, s, 0.5 / s, -0.25 / (s * u)
    if op == "abs":
        sg = np.sign(u)
        return u != 0, np.abs(u), sg, np.zeros_like(u)
    raise ValueError(op)


def _power_derivs(u, p):
    """(domain_ok, f, f', f'') for u**p with constant exponent ``p``."""
    if p == 0:
        one = np.ones_like(u)
        return None, one, np.zeros_like(u), np.zeros_like(u)
    if float(p).is_integer():
        ok = None if p > 0 else u != 0
        f = u ** p
        d1 = p * u ** (p - 1) if p != 1 else np.ones_like(u)
        d2 = p * (p - 1) * u ** (p - 2) if p not in (1, 2) else np.full_like(u, 2.0 if p == 2 else 0.0)
        return ok, f, d1, d2
    return u > 0, u ** p, p * u ** (p - 1), p * (p - 1) * u ** (p - 2)


def _chain(f, d1, d2, g, H):
    ng = d1[:, None] * g
    nH = d1[:, None, None] * H + d2[:, None, None] * (g[:, :, None] * g[:, None, :])
    return f, ng, nH


def _mul(a, b):
    av, ag, aH = a
    bv, bg, bH = b
    cross = ag[:, :, None] * bg[:, None, :]
    return (
        av * bv,
        ag * bv[:, None] + av[:, None] * bg,
        aH * bv[:, None, None] + av[:, None, None] * bH + (cross + np.swapaxes(cross, 1, 2)),
    )


def _finite_rows(j):
    v, g, H = j
    return np.isfinite(v) & np.isfinite(g).all(axis=1) & np.isfinite(H).all(axis=(1, 2))


def _mask_bad(ctx, j):
    v, g, H = j
    if ctx.bad.any():
        v = np.where(ctx.bad, np.nan, v)
        g = np.where(ctx.bad[:, None], np.nan, g)
        H = np.where(ctx.bad[:, None, None], np.nan, H)
    return v, g, H


def _jet(e, ctx):
    if isinstance(e, Const):
        return np.full(ctx.m, e.value), ctx.zero_g, ctx.zero_h
    if isinstance(e, Var):
        g = np.zeros((ctx.m, ctx.n))
        g[:, e.index - 1] = 1.0
        return ctx.X[:, e.index - 1].copy(), g, ctx.zero_h
    if isinstance(e, Unary):
        u, ug, uH = _jet(e.arg, ctx)
        if e.op == "neg":
            out = (-u, -ug, -uH)
        else:
            ok, f, d1, d2 = _unary_derivs(e.op, u)
            if ok is not None:
                ctx.fail(e, ~ok, u, f"{e.op} argument outside differentiable domain")
            out = _chain(f, d1, d2, ug, uH)
    elif isinstance(e, Binary):
        out = _binary_jet(e, ctx)
    else:
        raise TypeError(f"not an expression node: {e!r}")
    ctx.fail(e, ~_finite_rows(out), out[0], "non-finite result")
    return _mask_bad(ctx, out)


def _binary_jet(e, ctx):
    if e.op == "^":
        p = _constant_value(e.right)
        a = _jet(e.left, ctx)
        if p is not None:
            ok, f, d1, d2 = _power_derivs(a[0], p)
            if ok is not None:
                ctx.fail(e, ~ok, a[0], f"base of ^{p!r} outside domain")
            return _chain(f, d1, d2, a[1], a[2])
        # variable exponent: a^b = exp(b*log(a))
        ctx.fail(e, ~(a[0] > 0), a[0], "base of variable power must be positive")
        b = _jet(e.right, ctx)
        la = _chain(np.log(a[0]), 1.0 / a[0], -1.0 / a[0] ** 2, a[1], a[2])
        prod = _mul(b, la)
        ex = np.exp(prod[0])
        return _chain(ex, ex, ex, prod[1], prod[2])
    a = _jet(e.left, ctx)
    b = _jet(e.right, ctx)
    if e.op == "+":
        return a[0] + b[0], a[1] + b[1], a[2] + b[2]
    if e.op == "-":
        return a[0] - b[0], a[1] - b[1], a[2] - b[2]
    if e.op == "*":
        return _mul(a, b)
    # division: a * (1/b)
    bv = b[0]
    ctx.fail(e, ~(bv != 0), bv, "division by zero")
    r = 1.0 / bv
    inv = _chain(r, -r * r, 2.0 * r * r * r, b[1], b[2])
    return _mul(a, inv)


def _value(e, ctx):
    if isinstance(e, Const):
        return np.full(ctx.m, e.value)
    if isinstance(e, Var):
        return ctx.X[:, e.index - 1].copy()
    if isinstance(e, Unary):
        u = _value(e.arg, ctx)
        op = e.op
        if op == "neg":
            out = -u
        elif op == "log":
            ctx.fail(e, ~(u > 0), u, "log of non-positive value")
            out = np.log(u)
        elif op == "sqrt":
            ctx.fail(e, ~(u >= 0), u, "sqrt of negative value")
            out = np.sqrt(u)
        else:
            out = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}[op](u)
    elif isinstance(e, Binary):
        a = _value(e.left, ctx)
        if e.op == "^":
            p = _constant_value(e.right)
            if p is not None and float(p).is_integer():
                if p < 0:
                    ctx.fail(e, ~(a != 0), a, "zero base with negative exponent")
                out = a ** p
            else:
                b = _value(e.right, ctx) if p is None else p
                ctx.fail(e, ~(a > 0), a, "base of non-integer power must be positive")
                out = a ** b
        else:
            b = _value(e.right, ctx)
            if e.op == "+":
                out = a + b
            elif e.op == "-":
                out = a - b
            elif e.op == "*":
                out = a * b
            else:
                ctx.fail(e, ~(b != 0), b, "division by zero")
                out = a / b
    else:
        raise TypeError(f"not an expression node: {e!r}")
    ctx.fail(e, ~np.isfinite(out), out, "non-finite result")
    if ctx.bad.any():
        out = np.where(ctx.bad, np.nan, out)
    return out


def _as_batch(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected an (m, n) array of points, got shape {X.shape}")
    return X


def jet2_batch(e: Expr, X):
    """Jets of ``e`` at each row of ``X``.

    Returns ``(value, gradient, hessian, bad)``; rows flagged in ``bad`` hit a
    domain error or overflow and hold NaN.  Never raises for per-row failures.
    """
    ctx = _Context(_as_batch(X), with_jets=True)
    with np.errstate(all="ignore"):
        v, g, H = _jet(e, ctx)
    return v, g, H, ctx.bad


def evaluate_batch(e: Expr, X):
    """Values of ``e`` at each row of ``X`` as ``(value, bad)``."""
    ctx = _Context(_as_batch(X), with_jets=False)
    with np.errstate(all="ignore"):
        v = _value(e, ctx)
    return v, ctx.bad


def evaluate(e: Expr, x) -> float:
    """Value of ``e`` at a single point; raises DomainError on failure."""
    ctx = _Context(_as_batch(np.atleast_2d(x)), with_jets=False)
    with np.errstate(all="ignore"):
        v = _value(e, ctx)
    if ctx.bad[0]:
        ctx.raise_first()
    return float(v[0])


def eval_jet2(e: Expr, x) -> Jet2:
    """Exact value, gradient and Hessian of ``e`` at the point ``x``.

    Raises:
        DomainError: naming the offending node and its argument value, when a
            node is evaluated outside its (differentiable) domain or the
            result is not finite.
    """
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite evaluation point {x}")
    ctx = _Context(x[None, :], with_jets=True)
    with np.errstate(all="ignore"):
        v, g, H = _jet(e, ctx)
    if ctx.bad[0]:
        ctx.raise_first()
    return Jet2(float(v[0]), g[0].copy(), H[0].copy())

"""Coefficient expressions for locally periodic operators.

A problem instance is written as text: each coefficient ``a[i][j]``, ``b[j]``
and ``c`` is an arithmetic expression in the slow variables ``x1..xN`` and the
fast (periodic, period 1) variables ``y1..yN``::

    >>> e = parse_expression("2 + sin(2*pi*y1)")
    >>> evaluate(e, x=[0.0], y=[0.25])
    3.0

Grammar, loosest to tightest binding::

    sum     := product (('+' | '-') product)*
    product := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := number | 'pi' | variable | func '(' args ')' | '(' sum ')'

so ``-2^2 == -4`` and ``2^3^2 == 512``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Num", "Var", "Neg", "BinOp", "Call", "Expression",
    "ExpressionError", "ParseError", "UnknownIdentifierError", "EvaluationError",
    "CoefficientError", "parse_expression", "to_text", "evaluate", "evaluate_array",
    "variables_of", "CoefficientSet", "validate_coefficient_set",
]

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "tanh": 1, "abs": 1, "min": 2, "max": 2}

_NUMPY_FUNCS = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh, "abs": np.abs,
    "min": np.minimum, "max": np.maximum,
}

_VAR_RE = re.compile(r"([xy])([1-9][0-9]*)$")


class ExpressionError(ValueError):
    """Base class for DSL failures."""


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownIdentifierError(ParseError):
    pass


class EvaluationError(ExpressionError):
    def __init__(self, message: str, node: "Expression"):
        self.node = node
        super().__init__(f"{message} in '{to_text(node)}'")


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # 'x', 'y' or 'pi'
    index: int = 0  # zero based; unused for pi


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expression = Union[Num, Var, Neg, BinOp, Call]


# --------------------------------------------------------------------------
# Tokenizer / parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Token:
    kind: str  # 'num', 'name', 'op', 'end'
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[pos + stripped]!r}", pos + stripped)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str, expected=None):
        if self.tok.text != text or self.tok.kind != "op":
            raise ParseError(f"expected {text!r}", self.tok.offset, expected or (text,))
        return self.advance()

    def parse(self) -> Expression:
        node = self.sum()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected token {self.tok.text!r}", self.tok.offset,
                             ("+", "-", "*", "/", "^", "end of input"))
        return node

    def sum(self) -> Expression:
        node = self.product()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.product())
        return node

    def product(self) -> Expression:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expression:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expression:
        t = self.tok
        atom_start = ("number", "identifier", "(", "-")
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.kind == "name":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect("(")
                args = [self.sum()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.sum())
                self.expect(")", (")", ","))
                if len(args) != FUNCTIONS[t.text]:
                    raise ParseError(
                        f"{t.text} takes {FUNCTIONS[t.text]} argument(s), got {len(args)}", t.offset)
                return Call(t.text, tuple(args))
            if t.text == "pi":
                return Var("pi")
            m = _VAR_RE.match(t.text)
            if m:
                return Var(m.group(1), int(m.group(2)) - 1)
            raise UnknownIdentifierError(f"unknown identifier {t.text!r}", t.offset)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.sum()
            self.expect(")", (")", "+", "-", "*", "/", "^"))
            return node
        if t.kind == "end":
            raise ParseError("unexpected end of input", t.offset, atom_start)
        raise ParseError(f"unexpected token {t.text!r}", t.offset, atom_start)


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an immutable expression tree.

    Raises
    ------
    ParseError
        With the byte offset of the offending token and the expected-token set.
    UnknownIdentifierError
        For names that are neither variables, ``pi`` nor known functions.
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 0, ("number", "identifier", "("))
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

def to_text(expr: Expression) -> str:
    """Fully parenthesised text; ``parse_expression(to_text(e)) == e``."""
    if isinstance(expr, Num):
        r = repr(float(expr.value))
        if r in ("inf", "nan"):
            raise ExpressionError(f"cannot print non-finite literal {r}")
        return r
    if isinstance(expr, Var):
        return "pi" if expr.kind == "pi" else f"{expr.kind}{expr.index + 1}"
    if isinstance(expr, Neg):
        return f"(-{to_text(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({to_text(expr.left)} {expr.op} {to_text(expr.right)})"
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(to_text(a) for a in expr.args)})"
    raise TypeError(f"not an expression: {expr!r}")


def variables_of(expr: Expression) -> set:
    """Set of ``(kind, index)`` pairs the expression depends on."""
    if isinstance(expr, Var):
        return set() if expr.kind == "pi" else {(expr.kind, expr.index)}
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Neg):
        return variables_of(expr.operand)
    if isinstance(expr, BinOp):
        return variables_of(expr.left) | variables_of(expr.right)
    return set().union(*(variables_of(a) for a in expr.args))


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _eval_scalar(e: Expression, x, y) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.kind == "pi":
            return math.pi
        src = x if e.kind == "x" else y
        return float(src[e.index])
    if isinstance(e, Neg):
        return -_eval_scalar(e.operand, x, y)
    if isinstance(e, BinOp):
        left = _eval_scalar(e.left, x, y)
        right = _eval_scalar(e.right, x, y)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if e.op == "/":
            if right == 0.0:
                raise EvaluationError("division by zero", e)
            return left / right
        if left == 0.0 and right < 0:
            raise EvaluationError("zero raised to a negative power", e)
        try:
            value = left ** right
        except OverflowError:
            value = math.inf
        if isinstance(value, complex):
            raise EvaluationError("negative base with fractional exponent", e)
        return value
    args = [_eval_scalar(a, x, y) for a in e.args]
    if e.name == "sin":
        return math.sin(args[0])
    if e.name == "cos":
        return math.cos(args[0])
    if e.name == "exp":
        try:
            return math.exp(args[0])
        except OverflowError:
            return math.inf
    if e.name == "tanh":
        return math.tanh(args[0])
    if e.name == "abs":
        return abs(args[0])
    if e.name == "min":
        return min(args)
    return max(args)


def _check_dims(expr: Expression, nx: int, ny: int):
    for kind, idx in variables_of(expr):
        limit = nx if kind == "x" else ny
        if idx >= limit:
            raise ExpressionError(
                f"variable {kind}{idx + 1} used but only {limit} {kind}-coordinates given")


def evaluate(expr: Expression, x: Sequence[float], y: Sequence[float]) -> float:
    """Evaluate at one point in IEEE double precision."""
    _check_dims(expr, len(x), len(y))
    return float(_eval_scalar(expr, x, y))


def _eval_array(e: Expression, x, y, shape):
    if isinstance(e, Num):
        return np.full(shape, e.value)
    if isinstance(e, Var):
        if e.kind == "pi":
            return np.full(shape, math.pi)
        src = x if e.kind == "x" else y
        return np.broadcast_to(np.asarray(src[e.index], dtype=float), shape)
    if isinstance(e, Neg):
        return -_eval_array(e.operand, x, y, shape)
    if isinstance(e, BinOp):
        left = _eval_array(e.left, x, y, shape)
        right = _eval_array(e.right, x, y, shape)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if e.op == "/":
            if np.any(right == 0.0):
                raise EvaluationError("division by zero", e)
            return left / right
        if np.any((left == 0.0) & (right < 0)):
            raise EvaluationError("zero raised to a negative power", e)
        if np.any((left < 0) & (right != np.round(right))):
            raise EvaluationError("negative base with fractional exponent", e)
        with np.errstate(over="ignore"):
            return np.power(left, right)
    args = [_eval_array(a, x, y, shape) for a in e.args]
    with np.errstate(over="ignore"):
        return _NUMPY_FUNCS[e.name](*args)


def evaluate_array(expr: Expression, x, y) -> np.ndarray:
    """Vectorised evaluation.

    ``x`` and ``y`` are sequences of coordinate arrays (``x[k]`` holds the
    k-th slow coordinate); all arrays broadcast against each other.
    """
    _check_dims(expr, len(x), len(y))
    arrays = [np.asarray(v, dtype=float) for v in list(x) + list(y)]
    shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
    return np.array(_eval_array(expr, x, y, shape), dtype=float)


# --------------------------------------------------------------------------
# Coefficient sets
# --------------------------------------------------------------------------

class CoefficientError(ExpressionError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """Validated coefficients ``a[i][j](x, y)``, ``b[j](x, y)``, ``c(x, y)``.

    ``m`` is the probed ellipticity constant, ``c_zero`` records that ``c``
    vanished on every probe and ``y_free`` that no coefficient depends on the
    fast variable (the homogenised objects then have closed forms).
    """
    dim: int
    a: tuple
    b: tuple
    c: Expression
    m: float
    c_zero: bool
    symmetric: bool = True
    y_free: bool = False
    probe_box: tuple = field(default=None, compare=False)

    def a_values(self, x, y) -> np.ndarray:
        """Array of shape ``(N, N) + broadcast shape``."""
        return np.array([[evaluate_array(self.a[i][j], x, y) for j in range(self.dim)]
                         for i in range(self.dim)])

    def b_values(self, x, y) -> np.ndarray:
        return np.array([evaluate_array(self.b[j], x, y) for j in range(self.dim)])

    def c_values(self, x, y) -> np.ndarray:
        return evaluate_array(self.c, x, y)

    def hamiltonian(self, p, x, y) -> np.ndarray:
        """Cell Hamiltonian ``a p.p - b.p + c`` (``p`` constant vector)."""
        p = np.asarray(p, dtype=float)
        av = self.a_values(x, y)
        bv = self.b_values(x, y)
        out = self.c_values(x, y).copy()
        for i in range(self.dim):
            out -= bv[i] * p[i]
            for j in range(self.dim):
                out += av[i, j] * p[i] * p[j]
        return out

    def texts(self) -> dict:
        return {
            "a": [[to_text(e) for e in row] for row in self.a],
            "b": [to_text(e) for e in self.b],
            "c": to_text(self.c),
        }


def _as_expr(e) -> Expression:
    return parse_expression(e) if isinstance(e, str) else e


def _probe_points(dim: int, density: int, box, rng: np.random.Generator):
    """Lattice of x in ``box`` times lattice of y in [0,1)^N, plus random points."""
    xs = [np.linspace(lo, hi, density) for lo, hi in box]
    ys = [np.arange(density) / density for _ in range(dim)]
    grids = np.meshgrid(*(xs + ys), indexing="ij")
    lattice = [g.ravel() for g in grids]
    n_rand = 64
    rand_x = [rng.uniform(lo, hi, n_rand) for lo, hi in box]
    rand_y = [rng.uniform(0.0, 1.0, n_rand) for _ in range(dim)]
    pts = [np.concatenate([lattice[k], (rand_x + rand_y)[k]]) for k in range(2 * dim)]
    return pts[:dim], pts[dim:]


def validate_coefficient_set(a, b, c, dim: int, probe_density: int = 9,
                             box=None, seed: int = 0) -> CoefficientSet:
    """Parse (if needed) and validate a coefficient set by probing.

    Checks symmetry of ``a``, ellipticity ``min eig a >= m > 0`` and period-1
    periodicity in every ``y_k`` on a probe lattice over ``box`` (default
    ``[-1, 1]^N``) times ``[0, 1)^N``.
    """
    if dim < 1:
        raise CoefficientError("dimension must be >= 1")
    if len(a) != dim or any(len(row) != dim for row in a):
        raise CoefficientError(f"a must be {dim}x{dim}")
    if len(b) != dim:
        raise CoefficientError(f"b must have {dim} entries")
    a = tuple(tuple(_as_expr(e) for e in row) for row in a)
    b = tuple(_as_expr(e) for e in b)
    c = _as_expr(c)
    exprs = [e for row in a for e in row] + list(b) + [c]
    for e in exprs:
        _check_dims(e, dim, dim)
    box = tuple((-1.0, 1.0) for _ in range(dim)) if box is None else tuple(map(tuple, box))

    rng = np.random.default_rng(seed)
    xs, ys = _probe_points(dim, probe_density, box, rng)

    for i in range(dim):
        for j in range(i + 1, dim):
            if a[i][j] == a[j][i]:
                continue
            lhs = evaluate_array(a[i][j], xs, ys)
            rhs = evaluate_array(a[j][i], xs, ys)
            if not np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12):
                raise CoefficientError(f"a is not symmetric: a[{i}][{j}] != a[{j}][{i}]")

    amat = np.array([[evaluate_array(a[i][j], xs, ys) for j in range(dim)] for i in range(dim)])
    amat = np.moveaxis(amat, (0, 1), (-2, -1))
    amat = 0.5 * (amat + np.swapaxes(amat, -1, -2))
    if not np.all(np.isfinite(amat)):
        raise CoefficientError("a is not finite on the probe lattice")
    m = float(np.min(np.linalg.eigvalsh(amat)))
    if m <= 0.0:
        raise CoefficientError(f"ellipticity fails: min eigenvalue of a is {m:.6g} <= 0")

    names = [f"a[{i}][{j}]" for i in range(dim) for j in range(dim)] + \
            [f"b[{j}]" for j in range(dim)] + ["c"]
    for name, e in zip(names, exprs):
        base = evaluate_array(e, xs, ys)
        for k in range(dim):
            shifted = [ys[q] + (1.0 if q == k else 0.0) for q in range(dim)]
            moved = evaluate_array(e, xs, shifted)
            if np.max(np.abs(moved - base) / np.maximum(1.0, np.abs(base))) > 1e-12:
                raise CoefficientError(f"{name} is not 1-periodic in y{k + 1}")

    c_vals = evaluate_array(c, xs, ys)
    c_zero = bool(np.all(c_vals == 0.0))
    y_free = all(kind != "y" for e in exprs for kind, _ in variables_of(e))
    return CoefficientSet(dim=dim, a=a, b=b, c=c, m=m, c_zero=c_zero, symmetric=True,
                          y_free=y_free, probe_box=box)

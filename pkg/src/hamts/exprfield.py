"""Expression parsing for coefficient entries and the Hermitian coefficient field.

Grammar (``^`` is right associative, unary minus binds looser than ``^``)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | atom ('^' factor)?
    atom   := number | 'i' | 't' | func '(' expr ')' | '(' expr ')'
    func   := exp | sin | cos | sqrt | log
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CoefficientError, EvaluationError, ExprSyntaxError

FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "log": np.log,
}


class Expr:
    """Base node.  Nodes are immutable and compare structurally."""

    def __call__(self, t):
        return eval_expr(self, t)


@dataclass(frozen=True)
class Num(Expr):
    value: complex


@dataclass(frozen=True)
class Var(Expr):
    name: str = "t"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


def Add(a, b):
    return BinOp("+", a, b)


def Sub(a, b):
    return BinOp("-", a, b)


def Mul(a, b):
    return BinOp("*", a, b)


def Div(a, b):
    return BinOp("/", a, b)


def Pow(a, b):
    return BinOp("^", a, b)


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))")


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.k = 0

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.text, tok[2])

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] == "end":
            self.fail(f"expected {value!r}" + (" but input ended" if tok[0] == "end" else f", found {tok[1]!r}"))
        return self.take()

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.factor())
        node = self.atom()
        if self.peek()[1] == "^":
            self.take()
            node = Pow(node, self.factor())
        return node

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Num(complex(float(val)))
        if kind == "name":
            self.take()
            if val == "t":
                return Var("t")
            if val == "i":
                return Num(1j)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            raise ExprSyntaxError(f"unknown name {val!r}", self.text, pos)
        if val == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected {val!r}")


def parse_expr(text) -> Expr:
    """Parse ``text`` into an expression tree; numbers become complex literals."""
    if isinstance(text, Expr):
        return text
    if isinstance(text, (int, float, complex)) and not isinstance(text, bool):
        return Num(complex(text))
    if not isinstance(text, str):
        raise ExprSyntaxError(f"expected a string, got {type(text).__name__}", repr(text), 0)
    return _Parser(text).parse()


# -- evaluation ----------------------------------------------------------------


def eval_expr(e: Expr, t):
    """Evaluate at scalar or array ``t`` with complex arithmetic and principal branches."""
    t_arr = np.asarray(t, dtype=float)
    out = _eval(e, t_arr)
    out = np.broadcast_to(np.asarray(out, dtype=complex), t_arr.shape)
    return complex(out) if out.ndim == 0 else out.copy()


def _eval(e, t):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return t.astype(complex)
    if isinstance(e, Neg):
        return -_eval(e.arg, t)
    if isinstance(e, Call):
        # adding +0 clears signed zeros so sqrt and log stay on the principal branch
        return FUNCTIONS[e.func](np.asarray(_eval(e.arg, t), dtype=complex) + 0.0)
    a = _eval(e.left, t)
    b = _eval(e.right, t)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvaluationError(f"division by zero in {pretty(e)!r}")
        return a / b
    return _power(a, b)


def _power(a, b):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    # integer exponents stay exact (and allow 0^k); others use the principal branch
    if b.ndim == 0 and b.imag == 0 and float(b.real).is_integer() and abs(b.real) <= 64:
        k = int(b.real)
        if k < 0 and np.any(a == 0):
            raise EvaluationError("zero raised to a negative power")
        return a ** k
    zero = a == 0
    if np.any(zero & (b.real <= 0)):
        raise EvaluationError("zero raised to a non-positive power")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(b * np.log(np.where(zero, 1, a) + 0.0))
    return np.where(zero, 0, out)


# -- printing ------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_num(z: complex) -> str:
    def r(x):
        return repr(float(x))
    if z.imag == 0:
        s = r(z.real)
        return s if z.real >= 0 else f"({s})"
    if z.real == 0:
        return f"({r(z.imag)}*i)"
    return f"({r(z.real)}+{r(z.imag)}*i)"


def pretty(e: Expr) -> str:
    """Fully re-parseable textual form of ``e``."""
    return _pp(e, 0)


def _pp(e, ctx):
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return "t"
    if isinstance(e, Call):
        return f"{e.func}({_pp(e.arg, 0)})"
    if isinstance(e, Neg):
        s = "-" + _pp(e.arg, _PREC["neg"])
        return f"({s})" if ctx > _PREC["neg"] - 1 else s
    p = _PREC[e.op]
    if e.op == "^":
        s = f"{_pp(e.left, p + 1)}^{_pp(e.right, p)}"
    else:
        s = f"{_pp(e.left, p)}{e.op}{_pp(e.right, p + 1)}"
    return f"({s})" if p < ctx else s


def is_constant(e: Expr) -> bool:
    if isinstance(e, Num):
        return True
    if isinstance(e, Var):
        return False
    if isinstance(e, (Neg, Call)):
        return is_constant(e.arg)
    return is_constant(e.left) and is_constant(e.right)


# -- coefficient field ------------------------------------------------------------

HERMITIAN_TOL = 1e-10


def _matrix(entries, d, name) -> tuple:
    if entries is None:
        return tuple(tuple(Num(0j) for _ in range(d)) for _ in range(d))
    if d == 1 and not isinstance(entries, (list, tuple)):
        entries = [[entries]]
    if d == 1 and isinstance(entries, (list, tuple)) and len(entries) == 1 \
            and not isinstance(entries[0], (list, tuple)):
        entries = [entries]
    if not isinstance(entries, (list, tuple)) or len(entries) != d or \
            any(not isinstance(row, (list, tuple)) or len(row) != d for row in entries):
        raise CoefficientError(f"{name}: expected a {d}x{d} matrix of expressions")
    try:
        return tuple(tuple(parse_expr(x) for x in row) for row in entries)
    except ExprSyntaxError as exc:
        raise CoefficientError(f"{name}: {exc}") from exc


def _eval_matrix(mat, t) -> np.ndarray:
    """Evaluate an expression matrix at array ``t``; result shape ``t.shape + (d, d)``."""
    t = np.asarray(t, dtype=float)
    d = len(mat)
    out = np.empty(t.shape + (d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            out[..., i, j] = eval_expr(mat[i][j], t)
    return out


@dataclass(frozen=True)
class Blocks:
    """Evaluated coefficient blocks at one or many points (leading axes = points)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W1: np.ndarray
    W2: np.ndarray

    @property
    def P(self) -> np.ndarray:
        top = np.concatenate([-self.C, np.conj(np.swapaxes(self.A, -1, -2))], axis=-1)
        bot = np.concatenate([self.A, self.B], axis=-1)
        return np.concatenate([top, bot], axis=-2)

    @property
    def W(self) -> np.ndarray:
        z = np.zeros_like(self.W1)
        top = np.concatenate([self.W1, z], axis=-1)
        bot = np.concatenate([z, self.W2], axis=-1)
        return np.concatenate([top, bot], axis=-2)


def symplectic_J(d: int) -> np.ndarray:
    J = np.zeros((2 * d, 2 * d), dtype=complex)
    J[:d, d:] = -np.eye(d)
    J[d:, :d] = np.eye(d)
    return J


class CoefficientField:
    """Coefficient blocks ``A, B, C, W1, W2`` as expression matrices.

    Entries flagged in ``rho_shifted`` are evaluated at ``rho(t) = t - nu``
    rather than at ``t`` (the Sturm-Liouville reduction needs ``p^rho``).
    Every evaluator takes the point and its graininess.
    """

    NAMES = ("A", "B", "C", "W1", "W2")

    def __init__(self, d: int, A, B, C, W1, W2, rho_shifted: dict | None = None):
        if int(d) != d or d < 1:
            raise CoefficientError(f"dimension must be a positive integer, got {d!r}")
        self.d = int(d)
        self.mats = {n: _matrix(m, self.d, n) for n, m in zip(self.NAMES, (A, B, C, W1, W2))}
        self.rho_shifted = {n: frozenset(v) for n, v in (rho_shifted or {}).items()}
        self.J = symplectic_J(self.d)
        self.J.setflags(write=False)

    def __repr__(self):
        body = ", ".join(
            f"{n}=[{'; '.join(', '.join(pretty(x) for x in row) for row in self.mats[n])}]"
            for n in self.NAMES)
        return f"CoefficientField(d={self.d}, {body})"

    def _block(self, name, t, nu):
        t = np.asarray(t, dtype=float)
        out = _eval_matrix(self.mats[name], t)
        shifted = self.rho_shifted.get(name)
        if shifted:
            nu = np.broadcast_to(np.asarray(nu, dtype=float), t.shape)
            if np.any(nu > 0):
                back = _eval_matrix(self.mats[name], t - nu)
                for (i, j) in shifted:
                    out[..., i, j] = back[..., i, j]
        return out

    def blocks(self, t, nu=0.0) -> Blocks:
        """Evaluate all blocks at scalar or array ``t`` with graininess ``nu``."""
        return Blocks(*(self._block(n, t, nu) for n in self.NAMES))

    def is_real(self, t) -> bool:
        """True if ``P`` and ``W`` are real at all sample points ``t``."""
        bl = self.blocks(t, 0.0)
        return all(np.allclose(np.imag(getattr(bl, n)), 0, atol=HERMITIAN_TOL) for n in self.NAMES)

    def validate(self, t, nu) -> None:
        """Check Hermiticity, weight semidefiniteness and invertibility of ``I - nu A``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nu = np.broadcast_to(np.asarray(nu, dtype=float), t.shape)
        bl = self.blocks(t, nu)
        for name in ("B", "C", "W1", "W2"):
            m = getattr(bl, name)
            dev = np.linalg.norm(m - np.conj(np.swapaxes(m, -1, -2)), axis=(-2, -1))
            k = int(np.argmax(dev))
            if dev[k] > HERMITIAN_TOL:
                raise CoefficientError(
                    f"{name} is not Hermitian at t={float(t[k])!r} (deviation {dev[k]:.3g})")
        for name in ("W1", "W2"):
            m = getattr(bl, name)
            herm = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
            low = np.linalg.eigvalsh(herm)[..., 0]
            k = int(np.argmin(low))
            if low[k] < -HERMITIAN_TOL:
                raise CoefficientError(
                    f"weight {name} is indefinite at t={float(t[k])!r} (min eigenvalue {low[k]:.3g})")
        E = np.eye(self.d) - nu[:, None, None] * bl.A
        smin = np.linalg.svd(E, compute_uv=False)[..., -1]
        scale = np.maximum(1.0, np.linalg.norm(E, ord=2, axis=(-2, -1)))
        k = int(np.argmin(smin / scale))
        if smin[k] <= 1e-13 * scale[k]:
            raise CoefficientError(
                f"I - nu*A is singular at t={float(t[k])!r} (nu={float(nu[k])!r})")


def build_coefficients(d, A, B, C, W1, W2, sample_grid=None) -> CoefficientField:
    """Construct a field and validate it on ``sample_grid`` (a ``Grid`` or ``(t, nu)``)."""
    field = CoefficientField(d, A, B, C, W1, W2)
    if sample_grid is not None:
        _validate_on(field, sample_grid)
    return field


def _validate_on(field, sample_grid):
    if hasattr(sample_grid, "t"):
        field.validate(sample_grid.t, sample_grid.nu)
    else:
        t, nu = sample_grid
        field.validate(t, nu)


def from_sturm_liouville(n: int, p: Sequence, sample_grid=None, weight="1") -> CoefficientField:
    """Hamiltonian form of the order-``2n`` formally self-adjoint scalar equation.

    ``p`` lists ``p_0 .. p_n``.  Coefficients ``p_1 .. p_n`` enter through
    ``p^rho``, so they are evaluated at ``rho(t)`` on scattered points.  The
    spectral parameter multiplies ``weight * y``, i.e. ``W1 = diag(weight, 0, ..)``
    and ``W2 = 0``.
    """
    n = int(n)
    if n < 1 or len(p) != n + 1:
        raise CoefficientError(f"sturm-liouville form needs n >= 1 and n+1 coefficients, got n={n}, {len(p)}")
    ps = [parse_expr(x) for x in p]
    zero = Num(0j)
    A = [[Num(1 + 0j) if j == i + 1 else zero for j in range(n)] for i in range(n)]
    B = [[zero] * n for _ in range(n)]
    B[n - 1][n - 1] = Div(Num(1 + 0j), ps[n])
    C = [[zero] * n for _ in range(n)]
    C[0][0] = ps[0]
    for k in range(1, n):
        C[k][k] = ps[k]
    W1 = [[parse_expr(weight) if (i == j == 0) else zero for j in range(n)] for i in range(n)]
    W2 = [[zero] * n for _ in range(n)]
    shifted = {"B": {(n - 1, n - 1)}, "C": {(k, k) for k in range(1, n)}}
    field = CoefficientField(n, A, B, C, W1, W2, rho_shifted=shifted)
    if sample_grid is not None:
        t, nu = (sample_grid.t, sample_grid.nu) if hasattr(sample_grid, "t") else sample_grid
        t = np.asarray(t, dtype=float)
        rho = t - np.asarray(nu, dtype=float)
        pn = eval_expr(ps[n], rho)
        bad = np.flatnonzero(np.abs(np.atleast_1d(pn)) == 0)
        if bad.size:
            raise CoefficientError(f"p_{n} vanishes at t={float(np.atleast_1d(rho)[bad[0]])!r}")
        _validate_on(field, (t, nu))
    return field

"""Comparison functions: class K / K-infinity gains and KL functions.

Every gain is an immutable callable on ``[0, domain_max]``. Calls accept a
float or a numpy array and are vectorised. Class membership is never assumed
from the construction; it is checked by sampling with :func:`is_class_k` and
:func:`is_kinf`, and every verdict holds only on the probed domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from mpmath import iv

from . import expr as _expr
from .expr import EvaluationError, ParseError

__all__ = [
    "DEFAULT_DOMAIN_MAX",
    "GainError",
    "DomainError",
    "NotKInfinityError",
    "InversionError",
    "EvaluationError",
    "ParseError",
    "ScalarGainFunction",
    "Zero",
    "Linear",
    "Power",
    "Expression",
    "Table",
    "Composition",
    "Sum",
    "Maximum",
    "Inverse",
    "ZERO",
    "IDENTITY",
    "parse_gain",
    "eval_gain",
    "compose",
    "invert",
    "add",
    "max_of",
    "GridSpec",
    "ClassKResult",
    "is_class_k",
    "is_kinf",
    "IdMinusResult",
    "id_minus_bounded",
    "KLFunction",
    "ExpKL",
    "PowerKL",
    "is_kl",
]

DEFAULT_DOMAIN_MAX = 1e9
INVERSION_TOL = 1e-10
BISECTION_MAX_ITER = 200


class GainError(ValueError):
    pass


class DomainError(GainError):
    pass


class NotKInfinityError(GainError):
    pass


class InversionError(ArithmeticError):
    pass


def _as_array(r):
    scalar = np.ndim(r) == 0
    return np.asarray(r, dtype=float), scalar


@dataclass(frozen=True)
class ScalarGainFunction:
    """Base class for gains ``[0, domain_max] -> [0, inf)``.

    Subclasses implement ``_eval`` on float arrays and may override
    ``_eval_iv`` with an outward-rounded interval extension.
    """

    domain_max: float = field(default=DEFAULT_DOMAIN_MAX, kw_only=True, compare=False)

    kind = "abstract"

    def __call__(self, r):
        arr, scalar = _as_array(r)
        if arr.size:
            lo, hi = np.min(arr), np.max(arr)
            if np.isnan(lo) or np.isnan(hi):
                raise DomainError("gain evaluated at NaN")
            if lo < 0:
                raise DomainError(f"negative input {lo!r}")
            if hi > self.domain_max:
                raise DomainError(f"domain overflow: {hi!r} > domain_max={self.domain_max!r}")
        out = self._eval(arr)
        out = np.broadcast_to(out, arr.shape).astype(float, copy=False)
        return float(out) if scalar else out

    def _eval(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval_iv(self, x):
        """Interval enclosure of ``f(x)`` for an ``mpmath.iv`` interval ``x``."""
        return self._eval_iv(x)

    def _eval_iv(self, x):
        # Monotone fallback: float values at the endpoints, widened by a few ulps.
        lo = float(self._eval(np.array([float(x.a)]))[0])
        hi = float(self._eval(np.array([float(x.b)]))[0])
        w = 4 * np.finfo(float).eps
        return iv.mpf([lo - w * abs(lo), hi + w * abs(hi)])

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def kinf_hint(self) -> bool | None:
        """Analytic K-infinity flag, or None when only sampling can tell."""
        return None

    @property
    def linear_coefficient(self) -> float | None:
        return None

    def to_expr(self, arg: str = "r") -> str:
        raise GainError(f"{self.kind} gain has no expression form")


@dataclass(frozen=True)
class Zero(ScalarGainFunction):
    kind = "builtin-parametric"

    def _eval(self, r):
        return np.zeros_like(r)

    def _eval_iv(self, x):
        return iv.mpf(0)

    @property
    def is_zero(self):
        return True

    @property
    def kinf_hint(self):
        return False

    @property
    def linear_coefficient(self):
        return 0.0

    def to_expr(self, arg="r"):
        return "0"


@dataclass(frozen=True)
class Linear(ScalarGainFunction):
    """``r -> a*r``."""

    a: float = 1.0
    kind = "builtin-parametric"

    def __post_init__(self):
        if not (self.a >= 0 and math.isfinite(self.a)):
            raise GainError(f"linear gain needs a finite a >= 0, got {self.a!r}")

    def _eval(self, r):
        return self.a * r

    def _eval_iv(self, x):
        return iv.mpf(self.a) * x

    @property
    def is_zero(self):
        return self.a == 0

    @property
    def kinf_hint(self):
        return self.a > 0

    @property
    def linear_coefficient(self):
        return float(self.a)

    def to_expr(self, arg="r"):
        if self.a == 0:
            return "0"
        if self.a == 1:
            return f"({arg})" if arg != "r" else "r"
        return f"{_fmt(self.a)}*({arg})" if arg != "r" else f"{_fmt(self.a)}*r"


@dataclass(frozen=True)
class Power(ScalarGainFunction):
    """``r -> c*r^p``."""

    c: float = 1.0
    p: float = 1.0
    kind = "builtin-parametric"

    def __post_init__(self):
        if not (self.c >= 0 and self.p > 0):
            raise GainError("power gain needs c >= 0 and p > 0")

    def _eval(self, r):
        return self.c * np.power(r, self.p)

    def _eval_iv(self, x):
        return iv.mpf(self.c) * x ** iv.mpf(self.p)

    @property
    def is_zero(self):
        return self.c == 0

    @property
    def kinf_hint(self):
        return self.c > 0

    @property
    def linear_coefficient(self):
        return float(self.c) if self.p == 1 else None

    def to_expr(self, arg="r"):
        base = arg if arg == "r" else f"({arg})"
        return f"{_fmt(self.c)}*{base}^{_fmt_atom(self.p)}"


ZERO = Zero()
IDENTITY = Linear(1.0)


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _fmt_atom(x: float) -> str:
    s = _fmt(x)
    return f"({s})" if x < 0 else s


@dataclass(frozen=True)
class Expression(ScalarGainFunction):
    """Gain given by a parsed expression in the variable ``r``."""

    text: str = "0"
    ast: _expr.Node = field(default=None, compare=False, repr=False)
    kind = "expression-AST"

    def __post_init__(self):
        if self.ast is None:
            object.__setattr__(self, "ast", _expr.parse(self.text))
        object.__setattr__(self, "_fn", self.ast.compile())

    def _eval(self, r):
        return _expr.guarded(self._fn, {"r": r})

    def _eval_iv(self, x):
        return self.ast.eval_iv({"r": x})

    @property
    def is_zero(self):
        return isinstance(self.ast, _expr.Num) and self.ast.value == 0

    @property
    def linear_coefficient(self):
        return _ast_linear(self.ast)

    def to_expr(self, arg="r"):
        if arg == "r":
            return self.ast.to_str()
        return self.ast.to_str({"r": arg})


def _ast_linear(node) -> float | None:
    N, V, B = _expr.Num, _expr.Var, _expr.BinOp
    if isinstance(node, N) and node.value == 0:
        return 0.0
    if isinstance(node, V):
        return 1.0
    if isinstance(node, B) and node.op == "*":
        if isinstance(node.left, N) and isinstance(node.right, V) and node.left.value >= 0:
            return float(node.left.value)
        if isinstance(node.right, N) and isinstance(node.left, V) and node.right.value >= 0:
            return float(node.right.value)
    if isinstance(node, B) and node.op == "/":
        if isinstance(node.left, V) and isinstance(node.right, N) and node.right.value > 0:
            return 1.0 / float(node.right.value)
    return None


@dataclass(frozen=True)
class Table(ScalarGainFunction):
    """Piecewise-linear gain through ``(xs[k], ys[k])``.

    Beyond the last knot the last segment's slope is continued. The table is
    K-infinity flagged only when that slope is positive.
    """

    xs: tuple[float, ...] = (0.0, 1.0)
    ys: tuple[float, ...] = (0.0, 1.0)
    kind = "piecewise-linear-table"

    def __post_init__(self):
        xs = tuple(float(x) for x in self.xs)
        ys = tuple(float(y) for y in self.ys)
        if len(xs) != len(ys) or len(xs) < 2:
            raise GainError("table needs at least two (x, y) knots of equal length")
        if xs[0] != 0.0 or ys[0] != 0.0:
            raise GainError("table must start at (0, 0)")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise GainError("table abscissae must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def last_slope(self) -> float:
        return (self.ys[-1] - self.ys[-2]) / (self.xs[-1] - self.xs[-2])

    def _eval(self, r):
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        out = np.interp(r, xs, ys)
        beyond = r > xs[-1]
        return np.where(beyond, ys[-1] + self.last_slope * (r - xs[-1]), out)

    @property
    def is_zero(self):
        return all(y == 0 for y in self.ys)

    @property
    def kinf_hint(self):
        return self.last_slope > 0


@dataclass(frozen=True)
class Composition(ScalarGainFunction):
    """``r -> outer(inner(r))``."""

    outer: ScalarGainFunction = ZERO
    inner: ScalarGainFunction = ZERO
    kind = "composition-node"

    def _eval(self, r):
        return self.outer(self.inner(r))

    def _eval_iv(self, x):
        return self.outer.eval_iv(self.inner.eval_iv(x))

    @property
    def kinf_hint(self):
        return True if (self.outer.kinf_hint and self.inner.kinf_hint) else None

    def to_expr(self, arg="r"):
        return self.outer.to_expr(self.inner.to_expr(arg))


@dataclass(frozen=True)
class Sum(ScalarGainFunction):
    f: ScalarGainFunction = ZERO
    g: ScalarGainFunction = ZERO
    kind = "composition-node"

    def _eval(self, r):
        return self.f(r) + self.g(r)

    def _eval_iv(self, x):
        return self.f.eval_iv(x) + self.g.eval_iv(x)

    @property
    def kinf_hint(self):
        if self.f.kinf_hint or self.g.kinf_hint:
            return True
        return None

    def to_expr(self, arg="r"):
        return f"({self.f.to_expr(arg)})+({self.g.to_expr(arg)})"


@dataclass(frozen=True)
class Maximum(ScalarGainFunction):
    f: ScalarGainFunction = ZERO
    g: ScalarGainFunction = ZERO
    kind = "composition-node"

    def _eval(self, r):
        return np.maximum(self.f(r), self.g(r))

    def _eval_iv(self, x):
        a, b = self.f.eval_iv(x), self.g.eval_iv(x)
        return iv.mpf([max(a.a, b.a), max(a.b, b.b)])

    @property
    def kinf_hint(self):
        if self.f.kinf_hint or self.g.kinf_hint:
            return True
        return None

    def to_expr(self, arg="r"):
        return f"max({self.f.to_expr(arg)}, {self.g.to_expr(arg)})"


@dataclass(frozen=True)
class Inverse(ScalarGainFunction):
    """Numerical inverse of a K-infinity gain by vectorised bisection."""

    f: ScalarGainFunction = IDENTITY
    kind = "composition-node"

    def _eval(self, y):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        hi_val = self.f(self.f.domain_max)
        if flat.size and np.max(flat) > hi_val:
            raise InversionError(
                f"value {np.max(flat)!r} exceeds f(domain_max)={hi_val!r}; "
                "no preimage on the probed domain"
            )
        lo = np.zeros_like(flat)
        hi = np.full_like(flat, self.f.domain_max)
        for _ in range(BISECTION_MAX_ITER):
            mid = 0.5 * (lo + hi)
            below = self.f(mid) < flat
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 2 * np.spacing(hi)):
                break
        x = 0.5 * (lo + hi)
        x = np.where(flat == 0, 0.0, x)
        resid = np.abs(self.f(x) - flat)
        collapsed = hi - lo <= 2 * np.spacing(hi)
        if np.any((resid > INVERSION_TOL) & ~collapsed):
            raise InversionError("bisection did not converge within 200 iterations")
        return x.reshape(y.shape)

    @property
    def kinf_hint(self):
        return True

    @property
    def linear_coefficient(self):
        a = self.f.linear_coefficient
        return 1.0 / a if a else None


def parse_gain(text: str, domain_max: float = DEFAULT_DOMAIN_MAX) -> ScalarGainFunction:
    """Parse an expression in ``r`` into a gain.

    ``"0"`` yields the zero gain. Class-K membership is not checked here.
    """
    ast = _expr.parse(text, variables=("r",))
    if isinstance(ast, _expr.Num) and ast.value == 0:
        return Zero(domain_max=domain_max)
    return Expression(text=text, ast=ast, domain_max=domain_max)


def eval_gain(f: ScalarGainFunction, r):
    return f(r)


def _dm(*fs):
    return min(f.domain_max for f in fs)


def compose(f: ScalarGainFunction, g: ScalarGainFunction) -> ScalarGainFunction:
    """``f o g``, simplified exactly where the families are closed."""
    dm = g.domain_max
    if f.is_zero or g.is_zero:
        return Zero(domain_max=dm)
    if isinstance(f, Linear) and f.a == 1:
        return g
    if isinstance(g, Linear) and g.a == 1:
        return f
    if isinstance(f, Linear) and isinstance(g, Linear):
        return Linear(f.a * g.a, domain_max=dm)
    if isinstance(f, Linear) and isinstance(g, Power):
        return Power(f.a * g.c, g.p, domain_max=dm)
    if isinstance(f, Power) and isinstance(g, Linear):
        return Power(f.c * g.a**f.p, f.p, domain_max=dm)
    if isinstance(f, Power) and isinstance(g, Power):
        return Power(f.c * g.c**f.p, f.p * g.p, domain_max=dm)
    return Composition(f, g, domain_max=dm)


def add(f: ScalarGainFunction, g: ScalarGainFunction) -> ScalarGainFunction:
    if f.is_zero:
        return g
    if g.is_zero:
        return f
    if isinstance(f, Linear) and isinstance(g, Linear):
        return Linear(f.a + g.a, domain_max=_dm(f, g))
    return Sum(f, g, domain_max=_dm(f, g))


def max_of(f: ScalarGainFunction, g: ScalarGainFunction) -> ScalarGainFunction:
    if f.is_zero:
        return g
    if g.is_zero:
        return f
    if isinstance(f, Linear) and isinstance(g, Linear):
        return Linear(max(f.a, g.a), domain_max=_dm(f, g))
    return Maximum(f, g, domain_max=_dm(f, g))


def invert(f: ScalarGainFunction) -> ScalarGainFunction:
    """Inverse of a K-infinity gain; analytic for linear and power gains."""
    if isinstance(f, Linear):
        if f.a <= 0:
            raise NotKInfinityError("zero linear gain has no inverse")
        return Linear(1.0 / f.a, domain_max=f(f.domain_max))
    if isinstance(f, Power):
        if f.c <= 0:
            raise NotKInfinityError("zero power gain has no inverse")
        return Power(f.c ** (-1.0 / f.p), 1.0 / f.p, domain_max=f(f.domain_max))
    if isinstance(f, Inverse):
        return f.f
    if isinstance(f, Composition):
        return compose(invert(f.inner), invert(f.outer))
    if not is_kinf(f).ok:
        raise NotKInfinityError(f"{f!r} failed the K-infinity growth check")
    return Inverse(f, domain_max=float(f(f.domain_max)))


# ---------------------------------------------------------------------------
# Sampled class checks


@dataclass(frozen=True)
class GridSpec:
    points: int = 512
    domain_max: float | None = None
    r_min: float = 1e-9

    def grid(self, f: ScalarGainFunction | None = None) -> np.ndarray:
        top = self.domain_max if self.domain_max is not None else (
            f.domain_max if f is not None else DEFAULT_DOMAIN_MAX
        )
        return np.logspace(math.log10(self.r_min), math.log10(top), self.points)


@dataclass(frozen=True)
class ClassKResult:
    ok: bool
    witness: tuple[float, float] | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def is_class_k(f: ScalarGainFunction, grid_spec: GridSpec = GridSpec()) -> ClassKResult:
    """Check ``f(0) = 0`` and strict increase on adjacent grid pairs.

    A failure carries the violating pair of radii; a nonzero ``f(0)`` is
    reported with the pair ``(0, 0)``.
    """
    f0 = f(0.0)
    if abs(f0) > 1e-12:
        return ClassKResult(False, (0.0, 0.0), f"f(0) = {f0!r} != 0")
    r = grid_spec.grid(f)
    v = f(r)
    bad = np.nonzero(np.diff(v) <= 0)[0]
    if bad.size:
        k = int(bad[0])
        return ClassKResult(
            False,
            (float(r[k]), float(r[k + 1])),
            f"not strictly increasing: f({r[k]!r}) = {v[k]!r} >= f({r[k + 1]!r}) = {v[k + 1]!r}",
        )
    if v[0] <= f0:
        return ClassKResult(False, (0.0, float(r[0])), "f(r_min) <= f(0)")
    return ClassKResult(True)


def is_kinf(f: ScalarGainFunction, grid_spec: GridSpec = GridSpec(), growth: float = 1e-3) -> ClassKResult:
    """Class K on the grid plus an unboundedness check.

    Uses the analytic flag when the family has one; otherwise requires the
    value to keep growing by at least ``growth`` (relative) over the last
    three decades of the probed domain.
    """
    res = is_class_k(f, grid_spec)
    if not res.ok:
        return res
    hint = f.kinf_hint
    if hint is not None:
        return res if hint else ClassKResult(False, None, "bounded family")
    top = grid_spec.domain_max if grid_spec.domain_max is not None else f.domain_max
    a, b = f(top / 1e3), f(top)
    if not b > a * (1 + growth):
        return ClassKResult(
            False, (top / 1e3, top), f"growth check failed: f({top / 1e3:g}) = {a!r}, f({top:g}) = {b!r}"
        )
    return res


@dataclass(frozen=True)
class IdMinusResult:
    bounded: bool
    sup: float
    probe_max: float


def id_minus_bounded(f: ScalarGainFunction, probe_max: float = 1e6, points: int = 512) -> IdMinusResult:
    """Estimate ``sup_{r <= probe_max} (r - f(r))`` and whether it stabilises."""
    r = np.logspace(-9, math.log10(probe_max), points)
    d = r - f(r)
    running = np.maximum.accumulate(np.maximum(d, 0.0))
    sup = float(running[-1])
    at_decade = float(running[np.searchsorted(r, probe_max / 10.0, side="right") - 1])
    increase = sup - at_decade
    stable = increase <= 1e-6 * max(abs(sup), np.finfo(float).tiny)
    return IdMinusResult(bool(stable), sup, probe_max)


# ---------------------------------------------------------------------------
# KL functions


@dataclass(frozen=True)
class KLFunction:
    kind = "builtin-parametric"

    def __call__(self, r, t):
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ExpKL(KLFunction):
    """``beta(r, t) = M r exp(-lam t)``."""

    M: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.M < 1 or self.lam <= 0:
            raise GainError("exponential KL function needs M >= 1 and lambda > 0")

    def __call__(self, r, t):
        return self.M * np.asarray(r, dtype=float) * np.exp(-self.lam * np.asarray(t, dtype=float))

    def to_json(self):
        return {"form": "exp", "M": self.M, "lambda": self.lam}


@dataclass(frozen=True)
class PowerKL(KLFunction):
    """``beta(r, t) = M r / (1 + t)^p``."""

    M: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.M < 1 or self.p <= 0:
            raise GainError("power KL function needs M >= 1 and p > 0")

    def __call__(self, r, t):
        return self.M * np.asarray(r, dtype=float) / (1.0 + np.asarray(t, dtype=float)) ** self.p

    def to_json(self):
        return {"form": "power", "M": self.M, "p": self.p}


def is_kl(beta: KLFunction, radii: Sequence[float] | None = None, times: Sequence[float] | None = None) -> bool:
    """Sampled check: increasing in r at each t, decreasing to ~0 in t at each r."""
    r = np.logspace(-6, 6, 64) if radii is None else np.asarray(radii, dtype=float)
    t = np.concatenate([[0.0], np.logspace(-3, 4, 64)]) if times is None else np.asarray(times, dtype=float)
    R, T = np.meshgrid(r, t, indexing="ij")
    B = beta(R, T)
    if np.any(beta(0.0, t) != 0):
        return False
    dr = np.diff(B, axis=0)
    # strict increase in r wherever the values have not underflowed to 0
    if np.any(dr < 0) or np.any((dr == 0) & (B[1:] > 0)):
        return False
    if np.any(np.diff(B, axis=1) > 0):
        return False
    return bool(np.all(B[:, -1] < B[:, 0]))

"""Gain matrices and the monotone operators they induce on the nonnegative orthant."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from mpmath import iv

from .compfunc import (
    GridSpec,
    Linear,
    ScalarGainFunction,
    Zero,
    add,
    is_class_k,
    is_kinf,
    parse_gain,
)

__all__ = [
    "Aggregation",
    "GainMatrix",
    "MonotoneMap",
    "GainOperator",
    "DiagonalOperatorD",
    "ComposedMap",
    "apply",
    "apply_D",
    "compose_AD",
    "linear_D",
    "as_vector",
]


class Aggregation(str, enum.Enum):
    SUM = "sum"
    MAX = "max"


class DimensionError(ValueError):
    pass


def as_vector(s, n: int) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if arr.shape[-1:] != (n,):
        raise DimensionError(f"expected vectors of length {n}, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("gain vectors must be componentwise nonnegative")
    return arr


@dataclass(frozen=True)
class GainMatrix:
    """``n x n`` matrix of gains with an identically zero diagonal."""

    entries: tuple[tuple[ScalarGainFunction, ...], ...]
    validate: bool = True

    def __post_init__(self):
        rows = tuple(tuple(row) for row in self.entries)
        object.__setattr__(self, "entries", rows)
        n = len(rows)
        if n == 0 or any(len(row) != n for row in rows):
            raise DimensionError("gain matrix must be square and nonempty")
        for i in range(n):
            if not rows[i][i].is_zero:
                raise ValueError(f"diagonal entry ({i + 1},{i + 1}) must be identically zero")
        if self.validate:
            for i, j in self.edges():
                res = is_class_k(rows[i][j], GridSpec(points=128))
                if not res.ok:
                    raise ValueError(f"entry ({i + 1},{j + 1}) is not class K: {res.reason}")

    @property
    def n(self) -> int:
        return len(self.entries)

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def edges(self) -> list[tuple[int, int]]:
        """Index pairs ``(i, j)`` with a nonzero gain, i.e. ``x_j`` drives ``x_i``."""
        return [
            (i, j)
            for i, row in enumerate(self.entries)
            for j, g in enumerate(row)
            if not g.is_zero
        ]

    @classmethod
    def from_exprs(cls, rows: Sequence[Sequence[str]], validate: bool = True) -> "GainMatrix":
        return cls(tuple(tuple(parse_gain(str(x)) for x in row) for row in rows), validate=validate)

    @classmethod
    def linear(cls, coeffs, validate: bool = False) -> "GainMatrix":
        a = np.asarray(coeffs, dtype=float)
        return cls(
            tuple(
                tuple(Zero() if a[i, j] == 0 else Linear(float(a[i, j])) for j in range(a.shape[1]))
                for i in range(a.shape[0])
            ),
            validate=validate,
        )

    def to_exprs(self) -> list[list[str]]:
        return [[g.to_expr() for g in row] for row in self.entries]

    def linear_coefficients(self) -> np.ndarray | None:
        """Coefficient matrix when every entry is ``a*r``, else ``None``."""
        out = np.zeros((self.n, self.n))
        for i, row in enumerate(self.entries):
            for j, g in enumerate(row):
                c = g.linear_coefficient
                if c is None:
                    return None
                out[i, j] = c
        return out


class MonotoneMap:
    """A monotone map on ``R^n_+`` evaluated on batches of shape ``(..., n)``."""

    n: int

    def __call__(self, s) -> np.ndarray:
        raise NotImplementedError

    def apply_iv(self, s: Sequence) -> list:
        """Interval enclosure of the map at a vector of ``mpmath.iv`` intervals."""
        raise NotImplementedError


@dataclass(frozen=True)
class GainOperator(MonotoneMap):
    matrix: GainMatrix
    aggregation: Aggregation = Aggregation.SUM

    def __post_init__(self):
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))

    @property
    def n(self) -> int:
        return self.matrix.n

    def __call__(self, s) -> np.ndarray:
        s = as_vector(s, self.n)
        out = np.zeros_like(s)
        combine = np.add if self.aggregation is Aggregation.SUM else np.maximum
        for i, j in self.matrix.edges():
            out[..., i] = combine(out[..., i], self.matrix[i, j](s[..., j]))
        return out

    def apply_iv(self, s):
        out = [iv.mpf(0) for _ in range(self.n)]
        for i, j in self.matrix.edges():
            v = self.matrix[i, j].eval_iv(s[j])
            if self.aggregation is Aggregation.SUM:
                out[i] = out[i] + v
            else:
                out[i] = iv.mpf([max(out[i].a, v.a), max(out[i].b, v.b)])
        return out


def apply(op: MonotoneMap, s) -> np.ndarray:
    return op(s)


@dataclass(frozen=True)
class DiagonalOperatorD(MonotoneMap):
    """``D(s) = ((Id + alpha_1)(s_1), ..., (Id + alpha_n)(s_n))``."""

    alphas: tuple[ScalarGainFunction, ...]
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(self.alphas))
        if self.validate:
            for k, a in enumerate(self.alphas):
                res = is_kinf(a, GridSpec(points=128))
                if not res.ok:
                    raise ValueError(f"alpha_{k + 1} is not K-infinity: {res.reason}")

    @property
    def n(self) -> int:
        return len(self.alphas)

    def __call__(self, s) -> np.ndarray:
        s = as_vector(s, self.n)
        out = np.empty_like(s)
        for k, a in enumerate(self.alphas):
            out[..., k] = s[..., k] + a(s[..., k])
        return out

    def apply_iv(self, s):
        return [s[k] + a.eval_iv(s[k]) for k, a in enumerate(self.alphas)]

    def id_plus_alpha(self, k: int) -> ScalarGainFunction:
        return add(Linear(1.0), self.alphas[k])


def linear_D(n: int, delta: float) -> DiagonalOperatorD:
    if not delta > 0:
        raise ValueError("delta must be positive")
    return DiagonalOperatorD(tuple(Linear(float(delta)) for _ in range(n)), validate=False)


def apply_D(D: DiagonalOperatorD, s) -> np.ndarray:
    return D(s)


@dataclass(frozen=True)
class ComposedMap(MonotoneMap):
    """``s -> outer(inner(s))``."""

    outer: MonotoneMap
    inner: MonotoneMap

    def __post_init__(self):
        if self.outer.n != self.inner.n:
            raise DimensionError("dimension mismatch in composition")

    @property
    def n(self) -> int:
        return self.outer.n

    def __call__(self, s) -> np.ndarray:
        return self.outer(self.inner(s))

    def apply_iv(self, s):
        return self.outer.apply_iv(self.inner.apply_iv(s))


def compose_AD(op: MonotoneMap, D: DiagonalOperatorD) -> ComposedMap:
    """The map ``s -> op(D(s))`` appearing in the strong small-gain condition."""
    return ComposedMap(op, D)

"""Sampled verification of the small-gain and strong small-gain conditions.

A violation of the small-gain condition is a nonzero ``s >= 0`` with
``A(s) >= s`` componentwise. The search is a truncation of a statement about
all of ``R^n_+``: a "holds" verdict only means no violation was found on
``[0, domain_max]^n`` by the configured probes.

Candidate violations are first found in floating point and then confirmed by
an outward-rounded interval evaluation of ``A(s)``. This keeps exact ties such
as ``Id(s) = s`` (a genuine violation) while rejecting ties produced only by
rounding, e.g. ``r(1 - exp(-r))`` evaluating to exactly ``r`` for ``r > 37``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import networkx as nx
import numpy as np
from mpmath import iv

from .compfunc import GridSpec, ScalarGainFunction, compose
from .gains import (
    Aggregation,
    DiagonalOperatorD,
    GainMatrix,
    GainOperator,
    Linear,
    MonotoneMap,
    compose_AD,
    linear_D,
)
from .compfunc import add as gain_add, Expression, Zero

__all__ = [
    "HOLDS",
    "FAILS",
    "ProbeSpec",
    "SGCVerdict",
    "DeltaResult",
    "StrongSGCVerdict",
    "CycleVerdict",
    "CycleLimitError",
    "NonLinearGainError",
    "check_sgc",
    "check_strong_sgc",
    "cycle_condition",
    "spectral_oracle",
    "is_violation",
    "confirm_violation",
    "kink_D",
]

HOLDS = "holds-on-probed-domain"
FAILS = "fails"

_STRATEGIES = ("grid", "rays", "iteration", "normalized-iteration")


class CycleLimitError(RuntimeError):
    pass


class NonLinearGainError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeSpec:
    domain_max: float = 1e6
    grid_points_per_axis: int = 33
    rays: int = 256
    seed: int = 0
    delta_grid: tuple[float, ...] = (0.5, 0.1, 0.01, 0.001)
    decades: float = 12.0
    ray_steps: int = 49
    iterations: int = 200
    max_grid_points: int = 60000
    max_confirmations: int = 256

    def __post_init__(self):
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        if not self.domain_max > 0:
            raise ValueError("domain_max must be positive")

    def scales(self, count: int) -> np.ndarray:
        """Log-spaced magnitudes over the probed range, with 1 always included."""
        top = math.log10(self.domain_max)
        t = np.logspace(top - self.decades, top, count)
        if 1.0 <= self.domain_max:
            t = np.union1d(t, [1.0])
        return t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_grid"] = list(self.delta_grid)
        return d


@dataclass(frozen=True)
class SGCVerdict:
    status: str
    witness: tuple[float, ...] | None = None
    image: tuple[float, ...] | None = None
    strategy: str | None = None
    probe: dict = field(default_factory=dict)
    candidates_checked: int = 0
    rounding_ties_rejected: int = 0

    @property
    def holds(self) -> bool:
        return self.status == HOLDS

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "witness": list(self.witness) if self.witness is not None else None,
            "image": list(self.image) if self.image is not None else None,
            "strategy": self.strategy,
            "candidates_checked": self.candidates_checked,
            "rounding_ties_rejected": self.rounding_ties_rejected,
            "probe": self.probe,
        }


@dataclass(frozen=True)
class DeltaResult:
    delta: float
    verdict: SGCVerdict

    def to_dict(self) -> dict:
        return {"delta": self.delta, **self.verdict.to_dict()}


@dataclass(frozen=True)
class StrongSGCVerdict:
    status: str
    delta: float | None
    results: tuple[DeltaResult, ...]
    family: str = "linear"
    probe: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.status == HOLDS

    @property
    def witness(self):
        if self.holds:
            return None
        return self.results[-1].verdict.witness

    @property
    def label(self) -> str:
        if self.holds:
            return f"strong small-gain condition holds on probed domain with delta={self.delta!r}"
        return (
            "evidence, not proof: every probed D of the "
            f"{self.family} family admits a violation"
        )

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "delta": self.delta,
            "family": self.family,
            "label": self.label,
            "witness": list(self.witness) if self.witness is not None else None,
            "per_delta": [r.to_dict() for r in self.results],
            "probe": self.probe,
        }


# ---------------------------------------------------------------------------
# Violation tests


def is_violation(op: MonotoneMap, s) -> bool:
    """Float check of ``A(s) >= s`` with ``s != 0``; tolerance 0."""
    s = np.asarray(s, dtype=float)
    return bool(np.any(s > 0) and np.all(op(s) >= s))


def confirm_violation(op: MonotoneMap, s) -> bool:
    """Interval check that ``A(s) >= s`` holds for the exact (unrounded) map."""
    s = np.asarray(s, dtype=float)
    if not np.any(s > 0):
        return False
    vals = op.apply_iv([iv.mpf(float(x)) for x in s])
    return all(v.a >= float(x) for v, x in zip(vals, s))


def _relative_margin(S: np.ndarray, AS: np.ndarray) -> np.ndarray:
    active = S > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(active, (AS - S) / np.where(AS > 0, AS, 1.0), np.inf)
    return np.min(rel, axis=-1)


@dataclass
class _Candidates:
    points: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    strategies: list = field(default_factory=list)

    def add(self, op, S: np.ndarray, strategy: int, keep: int):
        S = S.reshape(-1, op.n)
        S = S[np.any(S > 0, axis=1)]
        if not len(S):
            return
        AS = op(S)
        mask = np.all(AS >= S, axis=1)
        if not mask.any():
            return
        S, AS = S[mask], AS[mask]
        m = _relative_margin(S, AS)
        if len(S) > keep:
            idx = np.argsort(self._key(S, m), kind="stable")[:keep]
            S, m = S[idx], m[idx]
        self.points.append(S)
        self.margins.append(m)
        self.strategies.append(np.full(len(S), strategy))

    @staticmethod
    def _key(S, m):
        scale = np.abs(np.log10(np.max(S, axis=1)))
        # exact ties in margin prefer the unit scale
        return np.lexsort((scale, -np.round(m, 12)))

    def ordered(self):
        if not self.points:
            return []
        S = np.concatenate(self.points)
        m = np.concatenate(self.margins)
        st = np.concatenate(self.strategies)
        scale = np.abs(np.log10(np.max(S, axis=1)))
        order = np.lexsort((st, scale, -np.round(m, 12)))
        return [(S[k], int(st[k])) for k in order]


def _axis_values(probe: ProbeSpec, n: int) -> np.ndarray:
    g = probe.grid_points_per_axis
    g_eff = max(3, min(g, int(math.floor(probe.max_grid_points ** (1.0 / n)))))
    return np.concatenate([[0.0], probe.scales(g_eff - 1)])


def _grid_points(probe: ProbeSpec, n: int):
    axis = _axis_values(probe, n)
    for chunk in _chunked_product(axis, n, 20000):
        yield chunk


def _chunked_product(axis, n, size):
    it = itertools.product(axis, repeat=n)
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield np.array(block, dtype=float)


def _random_directions(rng, count: int, n: int) -> np.ndarray:
    d = rng.exponential(size=(count, n))
    zero = rng.random((count, n)) < 0.3
    d = np.where(zero, 0.0, d)
    empty = ~np.any(d > 0, axis=1)
    d[empty, rng.integers(0, n, size=empty.sum())] = 1.0
    return d / np.max(d, axis=1, keepdims=True)


def _supports(n: int, rng, limit: int = 63) -> np.ndarray:
    if 2**n - 1 <= limit:
        masks = [m for m in itertools.product([0.0, 1.0], repeat=n) if any(m)]
        return np.array(masks)
    masks = {tuple(1.0 if k == i else 0.0 for k in range(n)) for i in range(n)}
    masks.add(tuple([1.0] * n))
    while len(masks) < limit:
        m = tuple(float(x) for x in (rng.random(n) < 0.5))
        if any(m):
            masks.add(m)
    return np.array(sorted(masks))


def check_sgc(op: MonotoneMap, probe: ProbeSpec = ProbeSpec()) -> SGCVerdict:
    """Search ``[0, domain_max]^n`` for a nonzero ``s`` with ``op(s) >= s``.

    Probes, in order: a full log grid (axis values include 0 so faces are
    covered), random rays ``t*d``, plain iteration ``s <- op(s)`` from
    diagonal and ray seeds, and support-restricted normalised iteration
    ``s <- t * P(s + op(s)) / max(...)`` whose fixed points are
    eigen-directions ``op(s) = lambda*s``.
    """
    n = op.n
    rng = np.random.default_rng(probe.seed)
    keep = probe.max_confirmations
    cands = _Candidates()

    for S in _grid_points(probe, n):
        cands.add(op, S, 0, keep)

    t = probe.scales(probe.ray_steps)
    dirs = _random_directions(rng, probe.rays, n)
    ray_pts = (t[:, None, None] * dirs[None, :, :]).reshape(-1, n)
    ray_pts = ray_pts[np.all(ray_pts <= probe.domain_max, axis=1)]
    cands.add(op, ray_pts, 1, keep)

    # plain monotone iteration from seeds
    seeds = np.concatenate([t[:, None] * np.ones((1, n)), ray_pts[:: max(1, len(ray_pts) // 512)]])
    X = seeds.copy()
    for _ in range(min(50, probe.iterations)):
        X = op(np.minimum(X, probe.domain_max))
        X = X[np.all(np.isfinite(X), axis=1) & np.any(X > 0, axis=1)]
        if not len(X):
            break
        X = X[np.all(X <= probe.domain_max, axis=1)]
        cands.add(op, X, 2, keep)

    # normalised iteration restricted to each support
    masks = _supports(n, rng)
    ts = probe.scales(max(8, probe.ray_steps // 3))
    M = np.repeat(masks, len(ts), axis=0)
    T = np.tile(ts, len(masks))[:, None]
    X = M * T
    for k in range(probe.iterations):
        Y = M * (X + op(X))
        peak = np.max(Y, axis=1, keepdims=True)
        X = T * Y / peak
        if k % 10 == 9 or k == probe.iterations - 1:
            cands.add(op, X, 3, keep)

    checked = rejected = 0
    for s, strategy in cands.ordered():
        if checked >= probe.max_confirmations:
            break
        checked += 1
        if not is_violation(op, s):
            continue
        if confirm_violation(op, s):
            return SGCVerdict(
                FAILS,
                tuple(float(x) for x in s),
                tuple(float(x) for x in op(s)),
                _STRATEGIES[strategy],
                probe.to_dict(),
                checked,
                rejected,
            )
        rejected += 1
    return SGCVerdict(HOLDS, None, None, None, probe.to_dict(), checked, rejected)


def kink_D(n: int, delta: float) -> DiagonalOperatorD:
    """``alpha_i(r) = delta*min(r, 1) + delta*r``."""
    a = gain_add(Expression(f"{delta!r}*min(r, 1)"), Linear(float(delta)))
    return DiagonalOperatorD(tuple(a for _ in range(n)), validate=False)


_FAMILIES = {"linear": linear_D, "kink": kink_D}


def check_strong_sgc(
    op: MonotoneMap,
    delta_grid: Sequence[float] | None = None,
    probe: ProbeSpec = ProbeSpec(),
    family: str = "linear",
) -> StrongSGCVerdict:
    """Run :func:`check_sgc` on ``op o D`` for each ``delta`` (descending).

    Holds with the largest passing ``delta``; otherwise fails, with the
    witness of the smallest ``delta``.
    """
    grid = tuple(float(d) for d in (probe.delta_grid if delta_grid is None else delta_grid))
    if not grid:
        raise ValueError("delta grid must be nonempty")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("delta grid must be strictly descending")
    make_D = _FAMILIES[family]
    results = []
    passing = None
    for delta in grid:
        verdict = check_sgc(compose_AD(op, make_D(op.n, delta)), probe)
        results.append(DeltaResult(delta, verdict))
        if verdict.holds and passing is None:
            passing = delta
    status = HOLDS if passing is not None else FAILS
    pd = probe.to_dict()
    pd["delta_grid"] = list(grid)
    return StrongSGCVerdict(status, passing, tuple(results), family, pd)


# ---------------------------------------------------------------------------
# Oracles


@dataclass(frozen=True)
class CycleVerdict:
    status: str
    cycle: tuple[int, ...] | None = None
    r: float | None = None
    witness: tuple[float, ...] | None = None
    cycles_checked: int = 0
    exact: bool = True
    grid_points: int = 512
    domain_max: float = 1e6

    @property
    def holds(self) -> bool:
        return self.status == HOLDS

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "cycle": [i + 1 for i in self.cycle] if self.cycle is not None else None,
            "r": self.r,
            "witness": list(self.witness) if self.witness is not None else None,
            "cycles_checked": self.cycles_checked,
            "equivalent_to_sgc": self.exact,
            "grid_points": self.grid_points,
            "domain_max": self.domain_max,
        }


def _cycle_gain(matrix: GainMatrix, cycle: Sequence[int]) -> ScalarGainFunction:
    k = len(cycle)
    g = matrix[cycle[-1], cycle[0]]
    for m in range(k - 2, -1, -1):
        g = compose(matrix[cycle[m], cycle[m + 1]], g)
    return g


def _cycle_witness(matrix: GainMatrix, cycle: Sequence[int], r: float) -> np.ndarray:
    s = np.zeros(matrix.n)
    k = len(cycle)
    val = r
    vals = {}
    nxt = cycle[0]
    for m in range(k - 1, 0, -1):
        val = float(matrix[cycle[m], nxt](val))
        vals[cycle[m]] = val
        nxt = cycle[m]
    for i, v in vals.items():
        s[i] = v
    s[cycle[0]] = r
    return s


def cycle_condition(
    matrix: GainMatrix,
    grid: GridSpec = GridSpec(points=512, domain_max=1e6),
    aggregation: Aggregation | str = Aggregation.MAX,
    cycle_cap: int = 10_000,
) -> CycleVerdict:
    """Check that every simple cycle's composed gain stays below ``Id``.

    Edge ``i -> j`` exists iff ``gamma_ij`` is not identically zero. The
    cycle ``i1 -> ... -> ik -> i1`` composes to
    ``gamma_{i1 i2} o ... o gamma_{ik i1}``. For the max operator this
    is equivalent to the small-gain condition; for the sum operator it is
    only necessary (exact for ``n = 2``).
    """
    aggregation = Aggregation(aggregation)
    exact = aggregation is Aggregation.MAX or matrix.n <= 2
    G = nx.DiGraph()
    G.add_nodes_from(range(matrix.n))
    G.add_edges_from(matrix.edges())
    r = grid.grid()
    count = 0
    top = float(r[-1])
    for cycle in nx.simple_cycles(G):
        count += 1
        if count > cycle_cap:
            raise CycleLimitError(f"more than {cycle_cap} simple cycles")
        cycle = _rotate(cycle)
        g = _cycle_gain(matrix, cycle)
        vals = g(r)
        for k in np.nonzero(vals >= r)[0]:
            rk = float(r[k])
            if g.eval_iv(iv.mpf(rk)).a >= rk:
                w = _cycle_witness(matrix, cycle, rk)
                return CycleVerdict(FAILS, tuple(cycle), rk, tuple(float(x) for x in w), count, exact, len(r), top)
    return CycleVerdict(HOLDS, None, None, None, count, exact, len(r), top)


def _rotate(cycle):
    k = cycle.index(min(cycle))
    return list(cycle[k:]) + list(cycle[:k])


def spectral_oracle(matrix, tol: float = 1e-12, max_iter: int = 200_000) -> float:
    """Spectral radius of a nonnegative coefficient matrix by power iteration.

    The radius is the largest over strongly connected components. On each
    irreducible block ``I + A`` is primitive with Perron root ``1 + rho``;
    the upper Collatz-Wielandt bound ``max_i (Bx)_i / x_i`` is the estimate.
    """
    if isinstance(matrix, GainMatrix):
        a = matrix.linear_coefficients()
        if a is None:
            raise NonLinearGainError("spectral oracle needs linear gains a_ij * r only")
    else:
        a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("coefficient matrix must be square")
    if np.any(a < 0):
        raise ValueError("coefficient matrix must be nonnegative")
    G = nx.DiGraph()
    G.add_nodes_from(range(len(a)))
    G.add_edges_from(zip(*np.nonzero(a)))
    rho = 0.0
    for comp in nx.strongly_connected_components(G):
        idx = sorted(comp)
        block = a[np.ix_(idx, idx)]
        if np.any(block):
            rho = max(rho, _perron_root(block, tol, max_iter))
    return rho


def _perron_root(a: np.ndarray, tol: float, max_iter: int) -> float:
    B = np.eye(len(a)) + a
    x = np.ones(len(a))
    prev = np.inf
    for _ in range(max_iter):
        y = B @ x
        est = float(np.max(y / x))
        x = y / np.max(y)
        if abs(est - prev) <= tol * max(1.0, est):
            break
        prev = est
    return max(est - 1.0, 0.0)

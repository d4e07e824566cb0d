"""Explicit K-infinity bound for ``(Id - A)(w) <= v``.

With ``D = diag(Id + alpha_i)`` the operator ``D o (D - Id)^{-1} o (Id + A)``
is applied ``n`` times to the constant vector ``(|v|_max, ..., |v|_max)``;
the result dominates every admissible ``w``. ``xi(r)`` is the Euclidean
norm of that iterate started at ``(r, ..., r)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compfunc import NotKInfinityError, ScalarGainFunction, invert
from .gains import DiagonalOperatorD, MonotoneMap, as_vector, compose_AD
from .sgc import ProbeSpec, check_sgc

__all__ = ["ROperator", "XiGain", "XiReport", "build_R", "build_xi", "verify_xi_implication"]


@dataclass(frozen=True)
class ROperator(MonotoneMap):
    A: MonotoneMap
    D: DiagonalOperatorD
    steps: int
    alpha_inverses: tuple[ScalarGainFunction, ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.A.n

    def step(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        y = s + self.A(s)
        z = np.empty_like(y)
        for k, inv in enumerate(self.alpha_inverses):
            z[..., k] = inv(y[..., k])
        return self.D(z)

    def __call__(self, s) -> np.ndarray:
        s = as_vector(s, self.n)
        for _ in range(self.steps):
            s = self.step(s)
        return s


def build_R(A: MonotoneMap, D: DiagonalOperatorD, steps: int | None = None) -> ROperator:
    """``R = (D o alpha^{-1} o (Id + A))^n`` with ``(D - Id)^{-1}`` as ``alpha_i^{-1}``."""
    if A.n != D.n:
        raise ValueError("A and D dimensions differ")
    inverses = []
    for k, a in enumerate(D.alphas):
        try:
            inverses.append(invert(a))
        except NotKInfinityError as exc:
            raise NotKInfinityError(f"alpha_{k + 1} is not invertible: {exc}") from exc
    return ROperator(A, D, A.n if steps is None else steps, tuple(inverses))


@dataclass(frozen=True)
class XiGain(ScalarGainFunction):
    """``xi(r) = |R(r, ..., r)|``."""

    R: ROperator = None
    kind = "composition-node"

    def _eval(self, r):
        r = np.asarray(r, dtype=float)
        S = np.repeat(r[..., None], self.R.n, axis=-1)
        return np.linalg.norm(self.R(S), axis=-1)

    @property
    def kinf_hint(self):
        return None


def build_xi(A: MonotoneMap, D: DiagonalOperatorD, steps: int | None = None) -> XiGain:
    return XiGain(R=build_R(A, D, steps))


@dataclass(frozen=True)
class XiReport:
    trials: int
    violations: int
    vector_violations: int
    max_ratio: float
    max_vector_ratio: float
    seed: int
    domain_max: float
    worst_w: tuple[float, ...] | None = None
    worst_v: tuple[float, ...] | None = None

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.vector_violations == 0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "violations": self.violations,
            "vector_violations": self.vector_violations,
            "max_ratio": self.max_ratio,
            "max_vector_ratio": self.max_vector_ratio,
            "seed": self.seed,
            "domain_max": self.domain_max,
            "worst_w": list(self.worst_w) if self.worst_w is not None else None,
            "worst_v": list(self.worst_v) if self.worst_v is not None else None,
        }


def sample_conditioned_pairs(A: MonotoneMap, trials: int, rng, domain_max: float):
    """Draw ``w`` then ``v = max((Id - A)(w), 0) + noise`` (noise zero for a quarter)."""
    n = A.n
    mag = domain_max * 10.0 ** rng.uniform(-6, 0, size=(trials, 1))
    direction = rng.random((trials, n))
    direction = np.where(rng.random((trials, n)) < 0.25, 0.0, direction)
    w = mag * direction
    w[rng.random(trials) < 0.05] = 0.0
    v0 = np.maximum(w - A(w), 0.0)
    noise_scale = np.max(w, axis=1, keepdims=True) * 10.0 ** rng.uniform(-6, 0, size=(trials, 1))
    noise = rng.exponential(size=(trials, n)) * noise_scale
    noise = np.where(rng.random((trials, n)) < 0.3, 0.0, noise)
    noise[rng.random(trials) < 0.25] = 0.0
    v = v0 + noise
    return w, v


def verify_xi_implication(
    A: MonotoneMap,
    D: DiagonalOperatorD,
    xi: XiGain | None = None,
    trials: int = 10_000,
    seed: int = 0,
    domain_max: float = 1e3,
    check_precondition: bool = False,
    probe: ProbeSpec | None = None,
) -> XiReport:
    """Randomised test of ``(Id - A)(w) <= v  =>  |w| <= xi(|v|)``.

    Also checks the vector bound ``w <= R(|v|_max, ..., |v|_max)``.
    """
    if check_precondition:
        verdict = check_sgc(compose_AD(A, D), probe or ProbeSpec(domain_max=domain_max))
        if not verdict.holds:
            raise ValueError(f"A o D violates the small-gain condition at {verdict.witness}")
    xi = xi if xi is not None else build_xi(A, D)
    rng = np.random.default_rng(seed)
    w, v = sample_conditioned_pairs(A, trials, rng, domain_max)
    wn = np.linalg.norm(w, axis=1)
    bound = xi(np.linalg.norm(v, axis=1))
    vmax = np.max(v, axis=1)
    Rv = xi.R(np.repeat(vmax[:, None], A.n, axis=1))
    viol = wn > bound
    vec_viol = np.any(w > Rv, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, wn / bound, np.where(wn > 0, np.inf, 0.0))
        vratio = np.max(np.where(Rv > 0, w / Rv, np.where(w > 0, np.inf, 0.0)), axis=1)
    k = int(np.argmax(ratio))
    return XiReport(
        trials=trials,
        violations=int(viol.sum()),
        vector_violations=int(vec_viol.sum()),
        max_ratio=float(ratio.max()),
        max_vector_ratio=float(vratio.max()),
        seed=seed,
        domain_max=domain_max,
        worst_w=tuple(float(x) for x in w[k]),
        worst_v=tuple(float(x) for x in v[k]),
    )

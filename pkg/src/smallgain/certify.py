"""Stability certificates checked against sampled trajectories.

Every verdict here is "satisfied on samples": the estimates quantify over all
initial states, inputs and times, and only finitely many are simulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compfunc import (
    ExpKL,
    KLFunction,
    Linear,
    PowerKL,
    ScalarGainFunction,
    ZERO,
    compose,
    parse_gain,
)
from .netsim import ConstantInput, NetworkSystem, Trajectory, simulate_batch

__all__ = [
    "ISSCertificate",
    "UGSCertificate",
    "CheckReport",
    "ConvergenceTime",
    "HorizonExhaustedError",
    "check_iss",
    "check_ugs",
    "compose_ugs_bound",
    "probe_ugs_sweep",
    "estimate_convergence_time",
    "estimate_asymptotic_gain",
    "kl_from_dict",
]

ATOL = 1e-9
RTOL = 1e-6


def kl_from_dict(d: dict) -> KLFunction:
    form = d.get("form")
    if form == "exp":
        return ExpKL(float(d.get("M", 1.0)), float(d["lambda"]))
    if form == "power":
        return PowerKL(float(d.get("M", 1.0)), float(d["p"]))
    raise ValueError(f"unknown KL form {form!r}")


@dataclass(frozen=True)
class ISSCertificate:
    """``|phi(t, x, u)| <= beta(|x|, t) + gamma(|u|_inf)``."""

    beta: KLFunction
    gamma: ScalarGainFunction = ZERO

    def bound(self, r0: float, t, unorm: float):
        return self.beta(r0, t) + self.gamma(unorm)

    def to_dict(self) -> dict:
        return {"beta": self.beta.to_json(), "gamma": self.gamma.to_expr()}

    @classmethod
    def from_dict(cls, d: dict) -> "ISSCertificate":
        return cls(kl_from_dict(d["beta"]), parse_gain(str(d.get("gamma", "0"))))


@dataclass(frozen=True)
class UGSCertificate:
    """``|phi(t, x, u)| <= sigma(|x|) + gamma(|u|_inf)``."""

    sigma: ScalarGainFunction
    gamma: ScalarGainFunction = ZERO

    def bound(self, r0: float, t, unorm: float):
        return np.broadcast_to(self.sigma(r0) + self.gamma(unorm), np.shape(t))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.to_expr(), "gamma": self.gamma.to_expr()}

    @classmethod
    def from_dict(cls, d: dict) -> "UGSCertificate":
        return cls(parse_gain(str(d["sigma"])), parse_gain(str(d.get("gamma", "0"))))


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a certificate check.

    ``worst_margin`` is the smallest ``bound - observed`` over all samples.
    A sample passes when ``observed <= bound + atol + rtol * bound``.
    ``violation`` describes the sample with the largest tolerance-normalised
    excess, or is ``None`` when every sample passes.
    """

    satisfied: bool
    worst_margin: float
    samples: int
    worst_sample: dict = field(default_factory=dict)
    violation: dict | None = None
    atol: float = ATOL
    rtol: float = RTOL

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "label": "satisfied on samples" if self.satisfied else "violated",
            "worst_margin": self.worst_margin,
            "samples": self.samples,
            "worst_sample": self.worst_sample,
            "violation": self.violation,
            "atol": self.atol,
            "rtol": self.rtol,
        }


def _sample(traj: Trajectory, k: int, observed, bound, **extra) -> dict:
    d = {
        "t": float(traj.times[k]),
        "state": [float(x) for x in traj.states[k]],
        "observed": float(observed),
        "bound": float(bound),
    }
    d.update(extra)
    return d


def _check(traj: Trajectory, bound: np.ndarray, atol: float, rtol: float) -> CheckReport:
    observed = traj.norms
    margin = bound - observed
    allow = atol + rtol * np.abs(bound)
    excess = -margin / allow
    k_worst = int(np.argmin(margin))
    worst = _sample(traj, k_worst, observed[k_worst], bound[k_worst])
    violation = None
    ok = bool(np.all(margin >= -allow))
    if not ok:
        k = int(np.argmax(excess))
        violation = _sample(traj, k, observed[k], bound[k], reason="bound exceeded")
    worst_margin = float(margin[k_worst])
    if traj.blowup:
        # the trajectory left every bounded set before the horizon
        ok = False
        worst_margin = -math.inf
        violation = {
            "t": traj.escape_time,
            "state": None,
            "observed": traj.peak_norm,
            "bound": float(bound[-1]),
            "reason": "blowup",
        }
    return CheckReport(ok, worst_margin, len(observed), worst, violation, atol, rtol)


def _unorm(traj: Trajectory) -> float:
    return float(np.max(traj.unorm)) if len(traj.unorm) else 0.0


def check_iss(traj: Trajectory, cert: ISSCertificate, atol: float = ATOL, rtol: float = RTOL) -> CheckReport:
    r0 = float(np.linalg.norm(traj.x0))
    bound = np.asarray(cert.bound(r0, traj.times, _unorm(traj)), dtype=float)
    return _check(traj, bound, atol, rtol)


def check_ugs(traj: Trajectory, cert: UGSCertificate, atol: float = ATOL, rtol: float = RTOL) -> CheckReport:
    r0 = float(np.linalg.norm(traj.x0))
    bound = np.array(cert.bound(r0, traj.times, _unorm(traj)), dtype=float)
    return _check(traj, bound, atol, rtol)


def compose_ugs_bound(
    xi: ScalarGainFunction, sigma: ScalarGainFunction, gamma: ScalarGainFunction
) -> UGSCertificate:
    """Network certificate ``(xi o 2 sigma, xi o 2 gamma)`` from subsystem UGS gains."""
    two = Linear(2.0)
    return UGSCertificate(compose(xi, compose(two, sigma)), compose(xi, compose(two, gamma)))


# ---------------------------------------------------------------------------
# Sweeps


def _directions(dim: int, count: int, rng) -> np.ndarray:
    """Unit vectors: both signs of every axis, then random ones up to ``count``."""
    eye = np.eye(dim)
    base = np.concatenate([eye, -eye])
    if dim == 1:
        return base
    extra = max(0, count - len(base))
    if extra:
        g = rng.normal(size=(extra, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        base = np.concatenate([base, g])
    return base


def _sweep(sys: NetworkSystem, radii, levels, directions: int, seed: int):
    rng = np.random.default_rng(seed)
    dx = _directions(sys.N, directions, rng)
    du = _directions(sys.input_dim, 2 * sys.input_dim, rng) if sys.input_dim else np.zeros((1, 0))
    X0, U, meta = [], [], []
    for r in radii:
        xs = [np.zeros(sys.N)] if r == 0 else [r * d for d in dx]
        for c in levels:
            us = [np.zeros(sys.input_dim)] if c == 0 else [c * d for d in du]
            for x in xs:
                for u in us:
                    X0.append(x)
                    U.append(ConstantInput(tuple(u)) if sys.input_dim else ConstantInput(()))
                    meta.append((float(r), float(c)))
    return np.array(X0), U, meta


def probe_ugs_sweep(
    sys: NetworkSystem,
    cert: UGSCertificate,
    radii: Sequence[float],
    input_levels: Sequence[float],
    T: float = 20.0,
    dt: float = 1e-2,
    directions: int = 8,
    seed: int = 0,
    atol: float = ATOL,
    rtol: float = RTOL,
) -> CheckReport:
    """Run ``check_ugs`` over initial states of the given radii and constant inputs.

    Blowup during a run counts as a violation at its escape time.
    """
    X0, U, meta = _sweep(sys, radii, input_levels, directions, seed)
    trajs = simulate_batch(sys, X0, U, T, dt)
    worst = None
    first_violation = None
    satisfied = True
    total = 0
    for traj, (r, c) in zip(trajs, meta):
        rep = check_ugs(traj, cert, atol, rtol)
        total += rep.samples
        tag = {"radius": r, "input_level": c, "x0": [float(x) for x in traj.x0]}
        if worst is None or rep.worst_margin < worst[0]:
            worst = (rep.worst_margin, {**rep.worst_sample, **tag})
        if not rep.satisfied:
            satisfied = False
            if first_violation is None:
                first_violation = {**rep.violation, **tag}
    return CheckReport(satisfied, worst[0], total, worst[1], first_violation, atol, rtol)


class HorizonExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvergenceTime:
    """Empirical ``tau(eps, r)``: a lower estimate of the true uniform time."""

    tau: float
    eps: float
    r: float
    x0: tuple[float, ...]
    input_level: float
    runs: int
    label: str = "empirical"

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "eps": self.eps,
            "r": self.r,
            "x0": list(self.x0),
            "input_level": self.input_level,
            "runs": self.runs,
            "label": self.label,
        }


def _entry_time(traj: Trajectory, bound: float) -> float | None:
    """First sample time after which the norm stays within ``bound``."""
    outside = traj.norms > bound
    if traj.blowup or outside[-1]:
        return None
    idx = np.flatnonzero(outside)
    if not len(idx):
        return 0.0
    return float(traj.times[idx[-1] + 1])


def estimate_convergence_time(
    sys: NetworkSystem,
    eps: float,
    r: float,
    gamma: ScalarGainFunction = ZERO,
    input_levels: Sequence[float] | None = None,
    radii: Sequence[float] | None = None,
    direction_samples: int = 8,
    T: float = 50.0,
    dt: float = 1e-3,
    seed: int = 0,
) -> ConvergenceTime:
    """Max over ``|x0| <= r`` and constant ``|u| <= r`` of the time to enter ``eps + gamma(|u|)``.

    The default sweep uses radii and input levels ``{0, r/2, r}``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    radii = [0.0, r / 2, r] if radii is None else list(radii)
    levels = [0.0, r / 2, r] if input_levels is None else list(input_levels)
    if max(radii) > r or max(levels) > r:
        raise ValueError("sweep exceeds the radius r")
    X0, U, meta = _sweep(sys, radii, levels, direction_samples, seed)
    trajs = simulate_batch(sys, X0, U, T, dt)
    best = None
    for traj, (rad, c) in zip(trajs, meta):
        tau = _entry_time(traj, eps + float(gamma(c)))
        if tau is None:
            raise HorizonExhaustedError(
                f"no convergence within T={T!r} from x0={traj.x0.tolist()} at input level {c!r}"
            )
        if best is None or tau > best[0]:
            best = (tau, traj, c)
    tau, traj, c = best
    return ConvergenceTime(tau, eps, r, tuple(float(x) for x in traj.x0), c, len(trajs))


def estimate_asymptotic_gain(
    sys: NetworkSystem,
    input_levels: Sequence[float],
    r: float,
    T: float = 20.0,
    dt: float = 1e-2,
    tail: float = 0.2,
    direction_samples: int = 8,
    seed: int = 0,
) -> dict[float, float]:
    """Per input level, the max over ``|x0| <= r`` of ``sup |phi(t)|`` on the last ``tail`` of ``[0, T]``.

    A run that blows up makes its level's estimate ``inf``.
    """
    if not 0 < tail <= 1:
        raise ValueError("tail fraction must lie in (0, 1]")
    out = {}
    for c in input_levels:
        X0, U, _ = _sweep(sys, [0.0, r / 2, r], [c], direction_samples, seed)
        trajs = simulate_batch(sys, X0, U, T, dt)
        est = 0.0
        for traj in trajs:
            if traj.blowup:
                est = math.inf
                break
            window = traj.times >= (1.0 - tail) * T - 1e-12
            est = max(est, float(np.max(traj.norms[window])))
        out[float(c)] = est
    return out

"""Fixed-step simulation of coupled ODE networks ``x_i' = f_i(x_1, ..., x_n, u)``.

States are stacked into one vector of length ``N = sum(dims)``; the right-hand
side is evaluated on batches of shape ``(B, N)`` so that sweeps over initial
conditions run as one vectorised integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import expr as _expr
from .compfunc import GainError, ScalarGainFunction
from .gains import Aggregation, GainMatrix, GainOperator

__all__ = [
    "Subsystem",
    "NetworkSystem",
    "InputSignal",
    "ZeroInput",
    "ConstantInput",
    "PiecewiseConstantInput",
    "Trajectory",
    "SimulationError",
    "EquilibriumResult",
    "Counterexample",
    "CounterexampleError",
    "BUILTINS",
    "builtin",
    "expression_subsystem",
    "simulate",
    "simulate_batch",
    "simulate_subsystem",
    "find_equilibrium",
    "build_counterexample",
]

BLOWUP_BOUND = 1e12
EQUILIBRIUM_TOL = 1e-8


class SimulationError(ArithmeticError):
    """Right-hand side could not be evaluated during integration."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} (t={time!r})")


# ---------------------------------------------------------------------------
# Systems

Rhs = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Subsystem:
    """One block of the network.

    ``rhs(X, U)`` maps the full stacked states ``(B, N)`` and inputs ``(B, m)``
    to this block's derivative ``(B, dim)``. ``exprs`` holds the textual form
    when one exists; it is what the JSON network spec stores.
    """

    dim: int
    rhs: Rhs = field(compare=False)
    exprs: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("subsystem dimension must be positive")
        if self.exprs is not None and len(self.exprs) != self.dim:
            raise ValueError(f"expected {self.dim} dynamics expressions, got {len(self.exprs)}")


def _symbols(N: int, m: int) -> list[str]:
    return [f"x{k + 1}" for k in range(N)] + [f"u{k + 1}" for k in range(m)]


def expression_subsystem(exprs: Sequence[str], N: int, m: int) -> Subsystem:
    """Subsystem whose components are expressions over ``x1..xN`` and ``u1..um``."""
    names = _symbols(N, m)
    asts = [_expr.parse(e, variables=names) for e in exprs]
    fns = [a.compile() for a in asts]

    def rhs(X, U):
        env = {f"x{k + 1}": X[:, k] for k in range(N)}
        env.update({f"u{k + 1}": U[:, k] for k in range(m)})
        cols = [np.broadcast_to(_expr.guarded(fn, env), X.shape[:1]) for fn in fns]
        return np.stack(cols, axis=1)

    return Subsystem(len(exprs), rhs, tuple(a.to_str() for a in asts))


@dataclass(frozen=True)
class NetworkSystem:
    subsystems: tuple[Subsystem, ...]
    input_dim: int = 1
    name: str = ""
    gains: GainMatrix | None = field(default=None, compare=False)
    aggregation: Aggregation = Aggregation.SUM
    # optional whole-network right-hand side, equal to the stacked blocks but cheaper
    joint_rhs: Rhs | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        if not self.subsystems:
            raise ValueError("network needs at least one subsystem")
        if self.input_dim < 0:
            raise ValueError("input_dim must be nonnegative")
        if self.gains is not None and self.gains.n != self.n:
            raise ValueError("gain matrix size differs from subsystem count")

    @property
    def n(self) -> int:
        return len(self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def N(self) -> int:
        return sum(self.dims)

    @property
    def slices(self) -> tuple[slice, ...]:
        out, k = [], 0
        for d in self.dims:
            out.append(slice(k, k + d))
            k += d
        return tuple(out)

    def rhs(self, X, U) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        if self.joint_rhs is not None:
            return self.joint_rhs(X, U)
        return np.concatenate([s.rhs(X, U) for s in self.subsystems], axis=1)

    def f(self, x, u) -> np.ndarray:
        """Single-point vector field."""
        x = np.asarray(x, dtype=float).reshape(1, self.N)
        u = np.asarray(u, dtype=float).reshape(1, self.input_dim)
        return self.rhs(x, u)[0]

    @property
    def serializable(self) -> bool:
        return all(s.exprs is not None for s in self.subsystems)

    def to_spec(self) -> dict:
        if not self.serializable:
            raise ValueError(f"system {self.name!r} has a subsystem without expression form")
        spec = {
            "n": self.n,
            "subsystems": [{"dim": s.dim, "dynamics": list(s.exprs)} for s in self.subsystems],
            "input_dim": self.input_dim,
        }
        if self.gains is not None:
            spec["gains"] = {"aggregation": self.aggregation.value, "matrix": self.gains.to_exprs()}
        return spec


# ---------------------------------------------------------------------------
# Builtins


def _planar_rhs(k: int) -> Rhs:
    other = 1 - k

    def rhs(X, U):
        y = X[:, other]
        with np.errstate(over="raise", under="ignore", invalid="raise"):
            try:
                v = -X[:, k] + y * (1.0 - np.exp(-y)) + U[:, 0]
            except FloatingPointError as exc:
                raise _expr.EvaluationError(str(exc)) from None
        return v[:, None]

    return rhs


def _planar() -> NetworkSystem:
    exprs = ("-x1+x2*(1-exp(-x2))+u1", "-x2+x1*(1-exp(-x1))+u1")
    subs = tuple(Subsystem(1, _planar_rhs(k), (exprs[k],)) for k in range(2))
    g = "r*(1-exp(-r))"

    def joint(X, U):
        Y = X[:, ::-1]
        return -X + Y * (1.0 - np.exp(-Y)) + U[:, :1]

    gains = GainMatrix.from_exprs([["0", g], [g, "0"]])
    return NetworkSystem(subs, 1, "planar_5_7", gains, joint_rhs=joint)


def _bUAG() -> NetworkSystem:
    def rhs(X, U):
        return (-X[:, 0] / (1.0 + np.abs(U[:, 0])))[:, None]

    return NetworkSystem((Subsystem(1, rhs, ("-x1/(1+abs(u1))",)),), 1, "bUAG_example_6_1")


def _linear_scalar() -> NetworkSystem:
    def rhs(X, U):
        return (-X[:, 0] + U[:, 0])[:, None]

    return NetworkSystem((Subsystem(1, rhs, ("-x1+u1",)),), 1, "linear_scalar")


BUILTINS: dict[str, Callable[[], NetworkSystem]] = {
    "planar_5_7": _planar,
    "bUAG_example_6_1": _bUAG,
    "linear_scalar": _linear_scalar,
}


def builtin(name: str) -> NetworkSystem:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown builtin system {name!r}; choose from {sorted(BUILTINS)}") from None


# ---------------------------------------------------------------------------
# Inputs


class InputSignal:
    """Piecewise-constant input ``u: [0, inf) -> R^m``."""

    m: int

    def values_at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def sup_norm(self, t_end: float = math.inf) -> float:
        """Exact ``sup_{0 <= t <= t_end} |u(t)|`` from segment values."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantInput(InputSignal):
    value: tuple[float, ...]

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        if not np.all(np.isfinite(v)):
            raise ValueError("input values must be finite")
        object.__setattr__(self, "value", tuple(float(x) for x in v))

    @property
    def m(self) -> int:
        return len(self.value)

    def values_at(self, t):
        return np.asarray(self.value)

    def sup_norm(self, t_end=math.inf):
        return float(np.linalg.norm(self.value))

    def to_dict(self):
        return {"kind": "constant", "value": list(self.value)}


def ZeroInput(m: int = 1) -> ConstantInput:
    return ConstantInput((0.0,) * m)


@dataclass(frozen=True)
class PiecewiseConstantInput(InputSignal):
    """Value ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``; the last value holds forever."""

    breakpoints: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if b.ndim != 1 or len(b) == 0 or len(b) != len(v):
            raise ValueError("need one value row per breakpoint")
        if b[0] != 0:
            raise ValueError("first breakpoint must be 0")
        if not np.all(np.isfinite(b)) or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be finite and strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("input values must be finite")
        object.__setattr__(self, "breakpoints", tuple(float(x) for x in b))
        object.__setattr__(self, "values", tuple(tuple(float(x) for x in row) for row in v))

    @property
    def m(self) -> int:
        return len(self.values[0])

    def _segment(self, t):
        return max(0, int(np.searchsorted(self.breakpoints, t, side="right")) - 1)

    def values_at(self, t):
        return np.asarray(self.values[self._segment(t)])

    def sup_norm(self, t_end=math.inf):
        last = self._segment(t_end) if math.isfinite(t_end) else len(self.values) - 1
        return float(max(np.linalg.norm(row) for row in self.values[: last + 1]))

    def to_dict(self):
        return {"kind": "steps", "breakpoints": list(self.breakpoints), "values": [list(r) for r in self.values]}


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    dims: tuple[int, ...]
    unorm: np.ndarray
    inputs: np.ndarray
    dt: float
    stride: int = 1
    blowup: bool = False
    escape_time: float | None = None
    peak_norm: float = 0.0

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def subsystem_norms(self) -> np.ndarray:
        out, k = [], 0
        for d in self.dims:
            out.append(np.linalg.norm(self.states[:, k : k + d], axis=1))
            k += d
        return np.stack(out, axis=1)

    @property
    def input_sup(self) -> float:
        return float(self.unorm[-1])


def _input_matrix(u, B: int, m: int, t: float) -> np.ndarray:
    if isinstance(u, InputSignal):
        return np.broadcast_to(u.values_at(t), (B, m))
    return np.stack([ui.values_at(t) for ui in u])


def _check_inputs(u, B: int, m: int):
    signals = [u] if isinstance(u, InputSignal) else list(u)
    if not isinstance(u, InputSignal) and len(signals) != B:
        raise ValueError(f"got {len(signals)} input signals for a batch of {B}")
    for s in signals:
        if s.m != m:
            raise ValueError(f"input has dimension {s.m}, system expects {m}")
    return signals


def _steps(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt * (1 - 1e-12):
        raise ValueError("horizon T must be at least dt")
    k = int(round(T / dt))
    if abs(k * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T!r} is not an integer multiple of dt={dt!r}")
    return k


def simulate_batch(
    sys: NetworkSystem,
    X0,
    u: InputSignal | Sequence[InputSignal],
    T: float,
    dt: float,
    stride: int = 1,
    blowup_bound: float = BLOWUP_BOUND,
) -> list[Trajectory]:
    """Classical RK4 with fixed step ``dt`` for a batch of initial conditions.

    A member whose norm exceeds ``blowup_bound`` (or turns non-finite) is
    frozen: its trajectory ends at the last stored sample and it is flagged
    with the escape time and the peak norm reached.
    """
    X = np.array(X0, dtype=float, ndmin=2)
    B, N = X.shape
    if N != sys.N:
        raise ValueError(f"initial condition has dimension {N}, system has {sys.N}")
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    signals = _check_inputs(u, B, sys.input_dim)
    steps = _steps(T, dt)
    m = sys.input_dim
    n_out = steps // stride + 1

    states = np.empty((n_out, B, N))
    states[0] = X
    U_rec = np.empty((n_out, B, m))
    U_rec[0] = _input_matrix(u, B, m, 0.0)
    active = np.ones(B, dtype=bool)
    last = np.zeros(B, dtype=int)
    escape = np.full(B, np.nan)
    peak = np.linalg.norm(X, axis=1)
    bad0 = ~np.isfinite(peak) | (peak > blowup_bound)
    if bad0.any():
        raise ValueError("initial condition already exceeds the blowup bound")

    const_u = all(isinstance(sig, ConstantInput) for sig in signals)
    U_const = np.array(_input_matrix(u, B, m, 0.0)) if const_u else None

    def F(t, Y, idx, everyone):
        if const_u:
            U = U_const if everyone else U_const[idx]
        else:
            U = _input_matrix(u, B, m, t)
            U = U if everyone else U[idx]
        try:
            return sys.rhs(Y, U)
        except (_expr.EvaluationError, GainError) as exc:
            raise SimulationError(str(exc), t) from exc

    idx = np.arange(B)
    everyone = True
    half = 0.5 * dt
    sixth = dt / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            t = k * dt
            Y = X if everyone else X[idx]
            k1 = F(t, Y, idx, everyone)
            k2 = F(t + half, Y + half * k1, idx, everyone)
            k3 = F(t + half, Y + half * k2, idx, everyone)
            k4 = F(t + dt, Y + dt * k3, idx, everyone)
            Ynew = Y + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            nrm = np.sqrt(np.einsum("ij,ij->i", Ynew, Ynew))
            if everyone:
                X = Ynew
            else:
                X[idx] = Ynew
            blown = ~(nrm <= blowup_bound)
            any_blown = blown.any()
            if any_blown:
                finite = np.isfinite(nrm)
                hit = idx[blown]
                escape[hit] = (k + 1) * dt
                peak[hit] = np.where(finite[blown], nrm[blown], np.inf)
                keep = ~blown
                peak[idx[keep]] = np.maximum(peak[idx[keep]], nrm[keep])
            elif everyone:
                np.maximum(peak, nrm, out=peak)
            else:
                peak[idx] = np.maximum(peak[idx], nrm)
            if (k + 1) % stride == 0:
                row = (k + 1) // stride
                alive = idx[~blown] if any_blown else idx
                states[row, alive] = X[alive]
                U_rec[row, alive] = (U_const if const_u else _input_matrix(u, B, m, (k + 1) * dt))[alive]
                last[alive] = row
            if any_blown:
                active[hit] = False
                idx = np.flatnonzero(active)
                everyone = False
                if not len(idx):
                    break

    times = np.arange(n_out) * (stride * dt)
    out = []
    for b in range(B):
        K = last[b] + 1
        sig = signals[0] if len(signals) == 1 else signals[b]
        unorm = np.array([sig.sup_norm(t) for t in times[:K]])
        out.append(
            Trajectory(
                times=times[:K].copy(),
                states=states[:K, b].copy(),
                dims=sys.dims,
                unorm=unorm,
                inputs=U_rec[:K, b].copy(),
                dt=dt,
                stride=stride,
                blowup=bool(not np.isnan(escape[b])),
                escape_time=None if np.isnan(escape[b]) else float(escape[b]),
                peak_norm=float(peak[b]),
            )
        )
    return out


def simulate(
    sys: NetworkSystem,
    x0,
    u: InputSignal | None = None,
    T: float = 1.0,
    dt: float = 1e-3,
    stride: int = 1,
    blowup_bound: float = BLOWUP_BOUND,
) -> Trajectory:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (sys.N,):
        raise ValueError(f"initial condition has dimension {x0.size}, system has {sys.N}")
    u = ZeroInput(sys.input_dim) if u is None else u
    return simulate_batch(sys, x0[None, :], u, T, dt, stride, blowup_bound)[0]


def simulate_subsystem(sys: NetworkSystem, i: int, traj: Trajectory, u: InputSignal) -> np.ndarray:
    """Integrate block ``i`` alone, fed the recorded states of the other blocks.

    The recorded states enter as piecewise-linear interpolants in time. The
    result is block ``i``'s state at the trajectory sample times.
    """
    sl = sys.slices[i]
    times = traj.times
    rec = traj.states
    h = traj.dt
    sub_steps = traj.stride
    m = sys.input_dim

    def full_state(t, xi):
        X = np.array([np.interp(t, times, rec[:, k]) for k in range(sys.N)])
        X[sl] = xi
        return X[None, :]

    def g(t, xi):
        U = u.values_at(t).reshape(1, m)
        return sys.subsystems[i].rhs(full_state(t, xi), U)[0]

    xi = rec[0, sl].copy()
    out = [xi.copy()]
    t = 0.0
    for _ in range(len(times) - 1):
        for _ in range(sub_steps):
            k1 = g(t, xi)
            k2 = g(t + 0.5 * h, xi + 0.5 * h * k1)
            k3 = g(t + 0.5 * h, xi + 0.5 * h * k2)
            k4 = g(t + h, xi + h * k3)
            xi = xi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        out.append(xi.copy())
    return np.array(out)


# ---------------------------------------------------------------------------
# Equilibria


@dataclass(frozen=True)
class EquilibriumResult:
    point: np.ndarray
    residual: float
    converged: bool
    iterations: int
    method: str


def _fd_jacobian(fun, x):
    n = len(x)
    J = np.empty((n, n))
    for j in range(n):
        h = 1e-6 * (1.0 + abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return J


def find_equilibrium(
    sys: NetworkSystem,
    guess,
    u=None,
    tol: float = EQUILIBRIUM_TOL,
    max_iter: int = 200,
) -> EquilibriumResult:
    """Newton's method with a central-difference Jacobian.

    When the Jacobian is numerically singular the step falls back to a
    damped fixed-point move ``x <- x + theta * f(x)`` with backtracking.
    """
    if u is None:
        u_vec = np.zeros(sys.input_dim)
    elif isinstance(u, ConstantInput):
        u_vec = np.asarray(u.value)
    elif isinstance(u, InputSignal):
        raise ValueError("find_equilibrium needs a constant input")
    else:
        u_vec = np.atleast_1d(np.asarray(u, dtype=float))

    def fun(x):
        return sys.f(x, u_vec)

    x = np.asarray(guess, dtype=float).ravel().copy()
    fx = fun(x)
    res = float(np.linalg.norm(fx))
    best = (x.copy(), res)
    method = "newton"
    for it in range(1, max_iter + 1):
        if res <= tol:
            return EquilibriumResult(x, res, True, it - 1, method)
        J = _fd_jacobian(fun, x)
        step = None
        if np.all(np.isfinite(J)) and np.linalg.cond(J) < 1e12:
            step = np.linalg.solve(J, -fx)
        else:
            method = "damped-fixed-point"
            step = fx
        theta = 1.0 if step is not fx else 0.5
        while True:
            trial = x + theta * step
            try:
                ft = fun(trial)
                rt = float(np.linalg.norm(ft))
            except (_expr.EvaluationError, GainError):
                rt = math.inf
            if rt < res or theta < 1e-8:
                break
            theta *= 0.5
        if not math.isfinite(rt):
            break
        x, fx, res = trial, ft, rt
        if res < best[1]:
            best = (x.copy(), res)
    x, res = best
    return EquilibriumResult(x, res, res <= tol, max_iter, method)


# ---------------------------------------------------------------------------
# Counterexample to 0-UGAS from a small-gain violation


class CounterexampleError(ValueError):
    pass


def _odd(g: ScalarGainFunction):
    def h(r):
        return np.sign(r) * g(np.abs(r))

    return h


def _odd_expr(g: ScalarGainFunction, var: str) -> str:
    return f"sign({var})*({g.to_expr(f'abs({var})')})"


def _counterexample_system(matrix: GainMatrix, eps: float) -> NetworkSystem:
    n = matrix.n
    scale = 1.0 - eps
    rows = [[(j, _odd(matrix[i, j])) for j in range(n) if not matrix[i, j].is_zero] for i in range(n)]

    def make_rhs(i):
        terms = rows[i]

        def rhs(X, U):
            acc = np.zeros(X.shape[0])
            for j, h in terms:
                acc = acc + h(X[:, j])
            return (-X[:, i] + scale * acc)[:, None]

        return rhs

    try:
        texts = []
        for i in range(n):
            parts = [_odd_expr(matrix[i, j], f"x{j + 1}") for j, _ in rows[i]]
            coupling = f"{scale!r}*({'+'.join(parts)})" if parts else "0"
            texts.append((f"-x{i + 1}+{coupling}",))
    except GainError:
        texts = [None] * n
    subs = tuple(Subsystem(1, make_rhs(i), texts[i]) for i in range(n))
    return NetworkSystem(subs, 1, "counterexample", matrix, Aggregation.SUM)


@dataclass(frozen=True)
class Counterexample:
    system: NetworkSystem
    equilibrium: np.ndarray
    epsilon: float
    residual: float
    witness: np.ndarray
    method: str

    def to_dict(self) -> dict:
        d = {
            "epsilon": self.epsilon,
            "equilibrium": [float(x) for x in self.equilibrium],
            "residual": self.residual,
            "witness": [float(x) for x in self.witness],
            "refinement": self.method,
        }
        if self.system.serializable:
            d["system"] = self.system.to_spec()
        return d


def _residual(op, eps, x):
    return float(np.linalg.norm(-x + (1.0 - eps) * op(x)))


def build_counterexample(
    matrix: GainMatrix,
    witness,
    max_iter: int = 10_000,
    tol: float = EQUILIBRIUM_TOL,
) -> Counterexample:
    """Network ``x' = -x + (1 - eps) * Gamma(x)`` with a nontrivial equilibrium.

    ``Gamma`` is the sum operator with gains extended oddly to negative
    arguments. ``eps`` is the smallest relative excess of ``Gamma(s)`` over
    ``s`` on the support of the witness, so ``(1 - eps) * Gamma(s) >= s`` and
    monotone iteration from ``s`` increases towards an equilibrium.
    """
    op = GainOperator(matrix, Aggregation.SUM)
    s = np.asarray(witness, dtype=float).ravel()
    if s.shape != (matrix.n,):
        raise ValueError("witness dimension differs from the gain matrix")
    if np.any(s < 0) or not np.any(s > 0):
        raise CounterexampleError("witness must be nonnegative and nonzero")
    gs = op(s)
    active = s > 0
    if np.any(gs < s):
        raise CounterexampleError("witness does not satisfy Gamma(s) >= s")
    if np.any(gs[active] <= 0):
        raise CounterexampleError("Gamma(s) vanishes on the support of the witness")
    eps = float(np.min((gs[active] - s[active]) / gs[active]))
    if eps <= 0:
        raise CounterexampleError("degenerate epsilon = 0: the violation is exactly marginal")
    system = _counterexample_system(matrix, eps)

    x = s.copy()
    res = _residual(op, eps, x)
    method = "exact"
    if res >= tol:
        method = "fixed-point"
        try:
            for _ in range(max_iter):
                x = 0.5 * x + 0.5 * (1.0 - eps) * op(x)
                res = _residual(op, eps, x)
                if res < tol:
                    break
        except GainError:
            res = math.inf
    if not res < tol:
        x, res, method = _ray_bisection(op, eps, s, tol)
    if not res < tol:
        eq = find_equilibrium(system, x if np.all(np.isfinite(x)) else s, tol=tol)
        if eq.residual < tol and np.any(np.abs(eq.point) > tol):
            x, res, method = eq.point, eq.residual, "newton"
    if not res < tol:
        raise CounterexampleError(f"no equilibrium found; best residual {res!r}")
    return Counterexample(system, x, eps, res, s, method)


def _ray_bisection(op, eps, s, tol):
    # zero of phi(t) = max_i ((1-eps)Gamma(ts)_i - t s_i) along the witness ray
    def phi(t):
        return float(np.max((1.0 - eps) * op(t * s) - t * s))

    lo, hi = 0.0, 1.0
    try:
        while phi(hi) > 0 and hi < 1e12:
            lo, hi = hi, hi * 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if phi(mid) > 0:
                lo = mid
            else:
                hi = mid
        t = 0.5 * (lo + hi)
        x = t * s
        return x, _residual(op, eps, x), "ray-bisection"
    except GainError:
        return s, math.inf, "ray-bisection"

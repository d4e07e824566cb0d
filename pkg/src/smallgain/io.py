"""JSON network specs, trajectory CSV files and report serialisation."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from . import expr as _expr
from .gains import Aggregation, GainMatrix, GainOperator
from .netsim import (
    BUILTINS,
    ConstantInput,
    NetworkSystem,
    PiecewiseConstantInput,
    Subsystem,
    Trajectory,
    builtin,
    expression_subsystem,
)

__all__ = [
    "SpecError",
    "load_json",
    "dumps",
    "sanitize",
    "gains_from_spec",
    "system_from_spec",
    "load_system",
    "input_from_spec",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


class SpecError(ValueError):
    pass


def load_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: malformed JSON: {exc}") from exc


def sanitize(obj):
    """Plain-JSON copy of ``obj``; non-finite floats become ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(sanitize(obj), indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Network specs


def _require(d: dict, key: str, kind):
    if key not in d:
        raise SpecError(f"missing field {key!r}")
    v = d[key]
    if not isinstance(v, kind) or isinstance(v, bool):
        raise SpecError(f"field {key!r} has the wrong type")
    return v


def gains_from_spec(spec: dict, domain_max: float | None = None) -> GainOperator:
    if not isinstance(spec, dict) or "gains" not in spec:
        raise SpecError("network spec has no 'gains' block")
    g = spec["gains"]
    rows = _require(g, "matrix", list)
    agg = g.get("aggregation", "sum")
    try:
        agg = Aggregation(agg)
    except ValueError:
        raise SpecError(f"aggregation must be 'sum' or 'max', got {agg!r}") from None
    if "n" in spec and spec["n"] != len(rows):
        raise SpecError(f"'n' is {spec['n']} but the gain matrix has {len(rows)} rows")
    if any(not isinstance(row, list) for row in rows):
        raise SpecError("gain matrix rows must be lists")
    matrix = GainMatrix.from_exprs([[str(x) for x in row] for row in rows])
    if domain_max is not None:
        matrix = GainMatrix(
            tuple(tuple(_with_domain(f, domain_max) for f in row) for row in matrix.entries),
            validate=False,
        )
    return GainOperator(matrix, agg)


def _with_domain(f, domain_max):
    return replace(f, domain_max=max(f.domain_max, domain_max))


def _builtin_block(name: str, offset: int, N: int, m: int) -> Subsystem:
    if name not in BUILTINS:
        raise SpecError(f"unknown builtin {name!r}")
    base = builtin(name)
    if base.n != 1:
        raise SpecError(f"builtin {name!r} is a {base.n}-block network, not a single subsystem")
    block = base.subsystems[0]
    names = [f"x{k + 1}" for k in range(base.N)] + [f"u{k + 1}" for k in range(base.input_dim)]
    subs = {f"x{k + 1}": f"x{offset + k + 1}" for k in range(base.N)}
    exprs = [_expr.parse(e, variables=names).to_str(subs) for e in block.exprs]
    return expression_subsystem(exprs, N, m)


def system_from_spec(spec: dict) -> NetworkSystem:
    """Build a network from ``{"n", "subsystems", "input_dim", "gains"?}``.

    Dynamics expressions use ``x1..xN`` (stacked state) and ``u1..um``.
    A block may instead be ``"builtin:<name>"`` for a single-block builtin.
    """
    if not isinstance(spec, dict):
        raise SpecError("network spec must be a JSON object")
    subs = _require(spec, "subsystems", list)
    m = spec.get("input_dim", 1)
    if not isinstance(m, int) or m < 0:
        raise SpecError("input_dim must be a nonnegative integer")
    if "n" in spec and spec["n"] != len(subs):
        raise SpecError(f"'n' is {spec['n']} but {len(subs)} subsystems are given")
    dims = []
    for k, s in enumerate(subs):
        if not isinstance(s, dict):
            raise SpecError(f"subsystem {k + 1} must be an object")
        d = _require(s, "dim", int)
        if d < 1:
            raise SpecError(f"subsystem {k + 1} has non-positive dim")
        dims.append(d)
    N = sum(dims)
    blocks = []
    offset = 0
    for k, (s, d) in enumerate(zip(subs, dims)):
        dyn = s.get("dynamics")
        if isinstance(dyn, str) and dyn.startswith("builtin:"):
            block = _builtin_block(dyn[len("builtin:") :], offset, N, m)
        elif isinstance(dyn, list) and all(isinstance(e, str) for e in dyn):
            block = expression_subsystem(dyn, N, m)
        else:
            raise SpecError(f"subsystem {k + 1}: 'dynamics' must be a list of expressions or 'builtin:<name>'")
        if block.dim != d:
            raise SpecError(f"subsystem {k + 1}: dim is {d} but {block.dim} dynamics are given")
        blocks.append(block)
        offset += d
    gains, agg = None, Aggregation.SUM
    if "gains" in spec:
        op = gains_from_spec(spec)
        if op.n != len(blocks):
            raise SpecError("gain matrix size differs from subsystem count")
        gains, agg = op.matrix, op.aggregation
    return NetworkSystem(tuple(blocks), m, spec.get("name", ""), gains, agg)


def load_system(ref: str) -> NetworkSystem:
    """``builtin:<name>`` or a path to a JSON network spec."""
    if ref.startswith("builtin:"):
        name = ref[len("builtin:") :]
        if name not in BUILTINS:
            raise SpecError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}")
        return builtin(name)
    return system_from_spec(load_json(ref))


def input_from_spec(text: str, m: int):
    """Parse ``const:<v1,...,vm>`` or ``steps:<file>``.

    A steps file holds ``{"breakpoints": [0, t1, ...], "values": [[...], ...]}``.
    """
    kind, _, rest = text.partition(":")
    if kind == "const":
        try:
            vals = tuple(float(v) for v in rest.split(",")) if rest.strip() else ()
        except ValueError:
            raise SpecError(f"bad constant input {rest!r}") from None
        if len(vals) == 1 and m > 1:
            vals = vals * m
        if len(vals) != m:
            raise SpecError(f"input has {len(vals)} components, system expects {m}")
        return ConstantInput(vals)
    if kind == "steps":
        d = load_json(rest)
        try:
            sig = PiecewiseConstantInput(tuple(d["breakpoints"]), tuple(d["values"]))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"bad steps file {rest!r}: {exc}") from exc
        if sig.m != m:
            raise SpecError(f"input has {sig.m} components, system expects {m}")
        return sig
    raise SpecError(f"input must be 'const:<values>' or 'steps:<file>', got {text!r}")


# ---------------------------------------------------------------------------
# Trajectory CSV


def _fmt(x: float) -> str:
    return repr(float(x))


def trajectory_csv(traj: Trajectory) -> str:
    """CSV text: a ``#``-prefixed JSON metadata line, then ``t,x_1..x_N,unorm`` rows."""
    buf = _io.StringIO()
    meta = {
        "dims": list(traj.dims),
        "dt": traj.dt,
        "stride": traj.stride,
        "blowup": traj.blowup,
        "escape_time": traj.escape_time,
        "peak_norm": traj.peak_norm,
    }
    buf.write("# " + json.dumps(sanitize(meta), allow_nan=False) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    N = traj.states.shape[1]
    w.writerow(["t"] + [f"x_{k + 1}" for k in range(N)] + ["unorm"])
    for t, x, un in zip(traj.times, traj.states, traj.unorm):
        w.writerow([_fmt(t)] + [_fmt(v) for v in x] + [_fmt(un)])
    return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    Path(path).write_text(trajectory_csv(traj), encoding="utf-8")


def read_trajectory_csv(path: str | Path) -> Trajectory:
    text = Path(path).read_text(encoding="utf-8")
    meta = {}
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            try:
                meta = json.loads(line[1:])
            except json.JSONDecodeError:
                pass
            continue
        if line.strip():
            lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise SpecError(f"{path}: empty trajectory file")
    header = [h.strip() for h in rows[0]]
    if header[0] != "t" or header[-1] != "unorm" or len(header) < 3:
        raise SpecError(f"{path}: header must be t,x_1..x_N,unorm")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise SpecError(f"{path}: non-numeric entry: {exc}") from exc
    if data.ndim != 2 or len(data) == 0 or data.shape[1] != len(header):
        raise SpecError(f"{path}: ragged or empty trajectory table")
    N = len(header) - 2
    dims = tuple(meta.get("dims") or (1,) * N)
    times = data[:, 0]
    dt = float(meta.get("dt", times[1] - times[0] if len(times) > 1 else 1.0))

    def _num(v, default):
        # sanitised non-finite values arrive as the strings "inf" / "nan"
        return default if v is None else float(v)

    return Trajectory(
        times=times,
        states=data[:, 1:-1],
        dims=dims,
        unorm=data[:, -1],
        inputs=np.zeros((len(times), 0)),
        dt=dt,
        stride=int(meta.get("stride", 1)),
        blowup=bool(meta.get("blowup", False)),
        escape_time=_num(meta.get("escape_time"), None),
        peak_norm=_num(meta.get("peak_norm"), float(np.max(np.linalg.norm(data[:, 1:-1], axis=1)))),
    )

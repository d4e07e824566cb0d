"""``sgt``: small-gain checks, xi tables, simulation and certificate checks from the shell.

Exit codes: 0 when the check passes, 1 on usage or input errors, 2 when the
mathematical verdict is negative (violation found, certificate violated,
refusal because a precondition fails).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .certify import ISSCertificate, UGSCertificate, check_iss, check_ugs
from .compfunc import GainError, GridSpec, InversionError
from .expr import EvaluationError, ParseError
from .gains import Aggregation, GainOperator, compose_AD, linear_D
from .netsim import CounterexampleError, SimulationError, build_counterexample, simulate
from .sgc import (
    CycleLimitError,
    NonLinearGainError,
    ProbeSpec,
    check_sgc,
    check_strong_sgc,
    cycle_condition,
    spectral_oracle,
)
from .xi import build_xi

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NEGATIVE = 2

XI_GRID = (1e-6, 1e6, 200)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_globals(p: argparse.ArgumentParser, top: bool):
    # defaults live on the top-level parser only, so flags work before or after the verb
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(0), help="random seed for probes (default 0)")
    p.add_argument("--domain-max", type=float, default=d(1e6), help="probed domain bound (default 1e6)")
    p.add_argument("--json-out", default=d(None), metavar="PATH", help="also write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sgt", description="ISS small-gain toolkit")
    _add_globals(p, top=True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", help="check the (strong) small-gain condition")
    c.add_argument("gains", help="network spec JSON with a 'gains' block")
    c.add_argument("--strong", action="store_true", help="also check the strong condition")
    c.add_argument("--delta-grid", type=_floats, default=None, help="descending deltas, e.g. 0.5,0.1")
    c.add_argument("--grid-points", type=int, default=33, help="grid points per axis")
    c.add_argument("--rays", type=int, default=256, help="random ray directions")
    c.set_defaults(func=cmd_check)

    x = sub.add_parser("xi", help="tabulate the xi bound for D = (1+delta) Id")
    x.add_argument("gains")
    x.add_argument("--delta", type=float, required=True)
    x.add_argument("--out", help="CSV output path (default stdout)")
    x.add_argument("--force", action="store_true", help="skip the strong small-gain precondition")
    x.set_defaults(func=cmd_xi)

    s = sub.add_parser("simulate", help="integrate a network with fixed-step RK4")
    s.add_argument("--system", required=True, help="builtin:<name> or network spec JSON")
    s.add_argument("--x0", type=_floats, required=True, help="initial state, comma separated")
    s.add_argument("--u", default="const:0", help="const:<v1,...> or steps:<file> (default const:0)")
    s.add_argument("--t", type=float, default=1.0, help="horizon")
    s.add_argument("--dt", type=float, default=1e-3, help="step size")
    s.add_argument("--stride", type=int, default=1, help="output every k-th step")
    s.add_argument("--out", help="CSV output path (default stdout)")
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("certify", help="check an ISS or UGS certificate against a trajectory")
    k.add_argument("trajectory", help="trajectory CSV from 'simulate'")
    k.add_argument("certificate", help="certificate JSON")
    k.set_defaults(func=cmd_certify)

    e = sub.add_parser("counterexample", help="build a network with a nontrivial equilibrium")
    e.add_argument("gains")
    e.add_argument("--out", help="system JSON output path (default stdout)")
    e.set_defaults(func=cmd_counterexample)

    for sp in (c, x, s, k, e):
        _add_globals(sp, top=False)
    return p


def _probe(args, **kw) -> ProbeSpec:
    return ProbeSpec(domain_max=args.domain_max, seed=args.seed, **kw)


def _emit(args, report: dict, primary: str | None = None, out: str | None = None) -> None:
    """Primary output goes to ``out`` or stdout; the JSON report to stdout when stdout is free."""
    text = sio.dumps(report)
    if primary is not None:
        if out:
            Path(out).write_text(primary, encoding="utf-8")
            sys.stdout.write(text)
        else:
            sys.stdout.write(primary)
    else:
        sys.stdout.write(text)
    if args.json_out:
        Path(args.json_out).write_text(text, encoding="utf-8")


def _load_op(args) -> GainOperator:
    return sio.gains_from_spec(sio.load_json(args.gains), domain_max=args.domain_max)


def cmd_check(args) -> int:
    op = _load_op(args)
    kw = {"grid_points_per_axis": args.grid_points, "rays": args.rays}
    if args.delta_grid is not None:
        kw["delta_grid"] = tuple(args.delta_grid)
    probe = _probe(args, **kw)
    verdict = check_sgc(op, probe)
    report = {
        "command": "check",
        "n": op.n,
        "aggregation": op.aggregation.value,
        "sgc": verdict.to_dict(),
    }
    try:
        cyc = cycle_condition(op.matrix, GridSpec(512, args.domain_max), aggregation=op.aggregation)
        report["cycle_condition"] = cyc.to_dict()
    except CycleLimitError as exc:
        report["cycle_condition"] = {"status": "skipped", "reason": str(exc)}
    if op.aggregation is Aggregation.SUM:
        try:
            report["spectral_radius"] = spectral_oracle(op.matrix)
        except NonLinearGainError:
            pass
    ok = verdict.holds
    if args.strong:
        strong = check_strong_sgc(op, probe.delta_grid, probe)
        report["strong_sgc"] = strong.to_dict()
        ok = ok and strong.holds
    _emit(args, report)
    return EXIT_OK if ok else EXIT_NEGATIVE


def _xi_table(xi, rs) -> list[float]:
    try:
        return [float(v) for v in xi(rs)]
    except (GainError, InversionError, EvaluationError):
        out = []
        for r in rs:
            try:
                out.append(float(xi(float(r))))
            except (GainError, InversionError, EvaluationError):
                out.append(float("nan"))
        return out


def cmd_xi(args) -> int:
    op = _load_op(args)
    if not args.delta > 0:
        raise ValueError("--delta must be positive")
    D = linear_D(op.n, args.delta)
    header = {
        "n": op.n,
        "aggregation": op.aggregation.value,
        "matrix": op.matrix.to_exprs(),
        "D": {"family": "linear", "delta": args.delta},
        "steps": op.n,
    }
    if args.force:
        header["strong_sgc"] = "not checked (--force)"
    else:
        verdict = check_sgc(compose_AD(op, D), _probe(args))
        header["strong_sgc"] = verdict.to_dict()
        if not verdict.holds:
            _emit(args, {"command": "xi", "refused": True, **header})
            return EXIT_NEGATIVE
    xi = build_xi(op, D)
    lo, hi, count = XI_GRID
    rs = np.logspace(np.log10(lo), np.log10(hi), count)
    vals = _xi_table(xi, rs)
    header["xi_at_1"] = _xi_table(xi, np.array([1.0]))[0]
    header["grid"] = {"r_min": lo, "r_max": hi, "points": count, "spacing": "log"}
    lines = ["# " + json.dumps(sio.sanitize(header), separators=(",", ":")), "r,xi"]
    lines += [f"{r!r},{v!r}" for r, v in zip(rs.tolist(), vals)]
    csv_text = "\n".join(lines) + "\n"
    report = {"command": "xi", "refused": False, **header, "out": args.out}
    _emit(args, report, csv_text, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    system = sio.load_system(args.system)
    u = sio.input_from_spec(args.u, system.input_dim)
    traj = simulate(system, args.x0, u, args.t, args.dt, args.stride)
    report = {
        "command": "simulate",
        "system": args.system,
        "samples": len(traj.times),
        "final_time": float(traj.times[-1]),
        "final_state": traj.final,
        "final_norm": float(traj.norms[-1]),
        "blowup": traj.blowup,
        "escape_time": traj.escape_time,
        "peak_norm": traj.peak_norm,
        "input": u.to_dict(),
        "out": args.out,
    }
    _emit(args, report, sio.trajectory_csv(traj), args.out)
    return EXIT_OK


def cmd_certify(args) -> int:
    traj = sio.read_trajectory_csv(args.trajectory)
    spec = sio.load_json(args.certificate)
    if not isinstance(spec, dict):
        raise sio.SpecError("certificate must be a JSON object")
    if "beta" in spec:
        kind, cert = "iss", ISSCertificate.from_dict(spec)
        rep = check_iss(traj, cert)
    elif "sigma" in spec:
        kind, cert = "ugs", UGSCertificate.from_dict(spec)
        rep = check_ugs(traj, cert)
    else:
        raise sio.SpecError("certificate needs 'beta' (ISS) or 'sigma' (UGS)")
    report = {"command": "certify", "kind": kind, "certificate": cert.to_dict(), **rep.to_dict()}
    _emit(args, report)
    return EXIT_OK if rep.satisfied else EXIT_NEGATIVE


def cmd_counterexample(args) -> int:
    op = _load_op(args)
    sum_op = GainOperator(op.matrix, Aggregation.SUM)
    verdict = check_sgc(sum_op, _probe(args))
    report = {"command": "counterexample", "sgc": verdict.to_dict()}
    if verdict.holds:
        report["status"] = "no SGC violation"
        _emit(args, report)
        return EXIT_NEGATIVE
    try:
        ce = build_counterexample(op.matrix, verdict.witness)
    except CounterexampleError as exc:
        report["status"] = "no counterexample"
        report["reason"] = str(exc)
        _emit(args, report)
        return EXIT_NEGATIVE
    d = ce.to_dict()
    system = d.pop("system")
    report.update({"status": "counterexample", **d})
    _emit(args, report, sio.dumps({**system, **d}), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        sio.SpecError,
        ParseError,
        GainError,
        SimulationError,
        ValueError,
        KeyError,
        OSError,
    ) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"sgt: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

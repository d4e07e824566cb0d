"""End-to-end acceptance checks; a pass/fail line per criterion is printed in the terminal summary."""

import json
import math
import time

import numpy as np
import pytest

from smallgain.certify import (
    ISSCertificate,
    check_iss,
    compose_ugs_bound,
    estimate_asymptotic_gain,
    estimate_convergence_time,
    probe_ugs_sweep,
)
from smallgain.cli import EXIT_NEGATIVE, EXIT_OK, main
from smallgain.compfunc import ExpKL, Linear, Power, PowerKL, Zero
from smallgain.gains import GainMatrix, GainOperator, linear_D
from smallgain.netsim import (
    ConstantInput,
    NetworkSystem,
    ZeroInput,
    builtin,
    expression_subsystem,
    simulate,
    simulate_batch,
)
from smallgain.sgc import FAILS, HOLDS, check_sgc, cycle_condition
from smallgain.xi import verify_xi_implication

SAT = "r*(1-exp(-r))"


def write_gains(tmp_path, name, matrix):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps({"n": len(matrix), "gains": {"aggregation": "sum", "matrix": matrix}}))
    return str(p)


@pytest.mark.criterion(1, "saturating pair: SGC holds, strong SGC fails for all deltas, < 10 s")
def test_saturating_pair_check(tmp_path, capsys):
    f = write_gains(tmp_path, "sat", [["0", SAT], [SAT, "0"]])
    t0 = time.perf_counter()
    code = main(["check", f, "--strong", "--delta-grid", "0.5,0.1,0.01,0.001"])
    elapsed = time.perf_counter() - t0
    rep = json.loads(capsys.readouterr().out)
    assert rep["sgc"]["status"] == HOLDS
    cyc = rep["cycle_condition"]
    assert cyc["status"] == HOLDS and cyc["grid_points"] == 512 and cyc["domain_max"] == 1e6
    strong = rep["strong_sgc"]
    assert strong["status"] == FAILS
    deltas = [d["delta"] for d in strong["per_delta"]]
    assert deltas == [0.5, 0.1, 0.01, 0.001]
    op = GainOperator(GainMatrix.from_exprs([["0", SAT], [SAT, "0"]]))
    for entry in strong["per_delta"]:
        w = np.array(entry["witness"])
        assert entry["status"] == FAILS and np.all(w > 0)
        # D(w) is enlarged by Gamma: Gamma(D(w)) >= w
        Dw = (1 + entry["delta"]) * w
        assert np.all(op(Dw) >= w)
    assert code == EXIT_NEGATIVE
    assert elapsed < 10.0


def _positive_quarter_disc(rng, count, radius):
    r = radius * np.sqrt(rng.random(count))
    th = rng.random(count) * (np.pi / 2)
    return np.c_[r * np.cos(th), r * np.sin(th)]


@pytest.mark.criterion(2, "planar system at u=0: V non-increasing, |x(20)| < 1e-3 from 20 draws, < 5 s")
def test_planar_zero_input_decay():
    rng = np.random.default_rng(0)
    X0 = _positive_quarter_disc(rng, 20, 5.0)
    t0 = time.perf_counter()
    trajs = simulate_batch(builtin("planar_5_7"), X0, ZeroInput(), T=20.0, dt=1e-2)
    elapsed = time.perf_counter() - t0
    for traj in trajs:
        V = np.sum(traj.states**2, axis=1)
        assert np.all(np.diff(V) <= 0)
        assert traj.norms[-1] < 1e-3
    assert elapsed < 5.0


@pytest.mark.criterion(3, "planar system at u=10 from (10,10): norm exceeds 1e6, ISS certificates violated")
def test_planar_not_iss():
    traj = simulate(builtin("planar_5_7"), [10.0, 10.0], ConstantInput((10.0,)), T=8e4, dt=1.0, stride=100)
    assert traj.blowup or traj.peak_norm > 1e6
    peak = traj.peak_norm
    r0 = math.hypot(10.0, 10.0)
    certs = [
        ISSCertificate(ExpKL(1.0, 1.0), Linear(1.0)),
        ISSCertificate(ExpKL(100.0, 0.01), Linear(1000.0)),
        ISSCertificate(PowerKL(50.0, 1.0), Power(10.0, 2.0)),
        ISSCertificate(ExpKL(1e4, 1.0), Linear(5e4)),
    ]
    for cert in certs:
        assert float(cert.gamma(10.0)) + float(cert.beta(r0, 0.0)) < peak
        rep = check_iss(traj, cert)
        assert not rep.satisfied
        assert rep.violation is not None


def _strong_operator(rng, delta):
    n = int(rng.choice([2, 3, 4]))
    C = rng.random((n, n)) * (rng.random((n, n)) < 0.7)
    np.fill_diagonal(C, 0)
    if not np.any(C):
        C[0, 1] = 1.0
    rho = max(abs(np.linalg.eigvals(C)))
    if rho > 0:
        C *= rng.uniform(0.3, 0.9) / ((1 + delta) * rho)
    saturating = bool(rng.random() < 0.5)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            c = float(C[i, j])
            if c == 0:
                row.append("0")
            else:
                row.append(f"{c!r}*r*(1-exp(-r))" if saturating else f"{c!r}*r")
        rows.append(row)
    return GainOperator(GainMatrix.from_exprs(rows))


@pytest.mark.criterion(4, "xi bound: 20 operators x 1e4 samples, zero violations, < 60 s")
def test_xi_property_suite():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for k in range(20):
        delta = (0.1, 0.2)[k % 2]
        A = _strong_operator(rng, delta)
        rep = verify_xi_implication(A, linear_D(A.n, delta), trials=10_000, seed=k, check_precondition=True)
        assert rep.violations == 0, rep.to_dict()
        assert rep.vector_violations == 0, rep.to_dict()
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.criterion(5, "oracle agreement: 200 linear sum networks, 200 max networks")
def test_oracle_agreement():
    rng = np.random.default_rng(1)
    mismatches = []
    count = 0
    while count < 200:
        n = int(rng.integers(2, 6))
        A = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
        np.fill_diagonal(A, 0)
        rho = max(abs(np.linalg.eigvals(A)))
        target = rng.uniform(0.1, 2.0)
        if rho == 0 or 0.95 <= target <= 1.05:
            continue
        count += 1
        A *= target / rho
        if check_sgc(GainOperator(GainMatrix.linear(A))).holds != (target < 1):
            mismatches.append(("sum", A.tolist()))
    for _ in range(200):
        n = int(rng.integers(2, 6))
        rows = [[Zero()] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                if i != j and rng.random() < 0.5:
                    c = float(rng.uniform(0.3, 1.6))
                    p = float(rng.choice([0.5, 1.0, 1.0, 2.0]))
                    rows[i][j] = Linear(c) if p == 1 else Power(c, p)
        m = GainMatrix(tuple(map(tuple, rows)))
        if check_sgc(GainOperator(m, "max")).holds != cycle_condition(m).holds:
            mismatches.append(("max", m.to_exprs()))
    assert mismatches == []


@pytest.mark.criterion(6, "doubling pair: epsilon 0.5, equilibrium (1,1), trajectory stays put to T=100")
def test_doubling_counterexample(tmp_path, capsys):
    f = write_gains(tmp_path, "two", [["0", "2*r"], ["2*r", "0"]])
    sysf = tmp_path / "ce.json"
    assert main(["counterexample", f, "--out", str(sysf)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert abs(rep["epsilon"] - 0.5) <= 1e-12
    assert np.allclose(rep["equilibrium"], [1.0, 1.0], rtol=0, atol=1e-12)
    assert rep["residual"] < 1e-8
    from smallgain.io import load_system

    sys = load_system(str(sysf))
    traj = simulate(sys, rep["equilibrium"], T=100.0, dt=1e-2)
    assert np.max(np.abs(traj.states - 1.0)) <= 1e-6


@pytest.mark.criterion(7, "input-dependent decay: tau(0.1, 2) within 2% of 3 ln 20, asymptotic gain < 1e-3")
def test_bUAG_probe():
    sys = builtin("bUAG_example_6_1")
    ct = estimate_convergence_time(sys, 0.1, 2.0, T=20.0, dt=1e-3)
    expected = 3 * math.log(20)
    assert 0.98 * expected <= ct.tau <= 1.02 * expected
    est = estimate_asymptotic_gain(sys, [1.0, 5.0, 25.0], r=2.0, T=300.0, dt=0.05)
    assert all(v < 1e-3 for v in est.values()), est


@pytest.mark.criterion(8, "composed UGS certificate for the linear a=0.5 network passes the sweep")
def test_composed_certificate_sweep():
    from smallgain.xi import build_xi

    A = GainOperator(GainMatrix.linear([[0, 0.5], [0.5, 0]]))
    D = linear_D(2, 0.2)
    assert check_sgc(GainOperator(GainMatrix.linear([[0, 0.6], [0.6, 0]]))).holds
    exprs = ["-x1+0.5*x2+u1", "-x2+0.5*x1+u1"]
    sys = NetworkSystem(tuple(expression_subsystem([e], 2, 1) for e in exprs), 1)
    cert = compose_ugs_bound(build_xi(A, D), Linear(1.0), Linear(1.0))
    rep = probe_ugs_sweep(sys, cert, [0.1, 1.0, 10.0], [0.0, 0.5, 1.0], T=20.0, dt=1e-2)
    assert rep.satisfied
    assert rep.worst_margin >= 0


@pytest.mark.criterion(9, "RK4 error ratio in [14, 18]; identical seeds give byte-identical reports")
def test_rk4_and_determinism(tmp_path, capsys):
    sys = NetworkSystem((expression_subsystem(["-x1"], 1, 1),), 1)
    e1 = abs(simulate(sys, [1.0], T=1.0, dt=0.1).final[0] - math.exp(-1))
    e2 = abs(simulate(sys, [1.0], T=1.0, dt=0.05).final[0] - math.exp(-1))
    assert 14 <= e1 / e2 <= 18
    f = write_gains(tmp_path, "sat", [["0", SAT], [SAT, "0"]])
    outputs = []
    j, x, s = tmp_path / "check.json", tmp_path / "xi.csv", tmp_path / "sim.csv"
    for _ in range(2):
        main(["--seed", "7", "--json-out", str(j), "check", f, "--strong"])
        main(["xi", f, "--delta", "0.1", "--force", "--out", str(x)])
        main(["simulate", "--system", "builtin:planar_5_7", "--x0", "1,2", "--t", "2", "--out", str(s)])
        outputs.append((j.read_bytes(), x.read_bytes(), s.read_bytes(), capsys.readouterr().out))
    assert outputs[0] == outputs[1]
    a = verify_xi_implication(
        GainOperator(GainMatrix.linear([[0, 0.5], [0.5, 0]])), linear_D(2, 0.2), trials=1000, seed=3
    )
    b = verify_xi_implication(
        GainOperator(GainMatrix.linear([[0, 0.5], [0.5, 0]])), linear_D(2, 0.2), trials=1000, seed=3
    )
    assert a.to_dict() == b.to_dict()

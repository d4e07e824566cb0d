import json
import math
import subprocess
import sys

import pytest

from smallgain.cli import EXIT_INPUT, EXIT_NEGATIVE, EXIT_OK, main
from smallgain.sgc import FAILS, HOLDS

SAT = "r*(1-exp(-r))"


def gains(tmp_path, name, matrix, agg="sum"):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps({"n": len(matrix), "gains": {"aggregation": agg, "matrix": matrix}}))
    return str(p)


@pytest.fixture
def files(tmp_path):
    return {
        "sat": gains(tmp_path, "sat", [["0", SAT], [SAT, "0"]]),
        "half": gains(tmp_path, "half", [["0", "0.5*r"], ["0.5*r", "0"]]),
        "zero": gains(tmp_path, "zero", [["0", "0"], ["0", "0"]]),
        "two": gains(tmp_path, "two", [["0", "2*r"], ["2*r", "0"]]),
        "dir": tmp_path,
    }


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_saturating_strong(files, capsys):
    code, out, _ = run(capsys, "check", files["sat"], "--strong")
    rep = json.loads(out)
    assert code == EXIT_NEGATIVE
    assert rep["sgc"]["status"] == HOLDS
    assert rep["cycle_condition"]["status"] == HOLDS
    assert rep["strong_sgc"]["status"] == FAILS
    assert all(d["witness"] for d in rep["strong_sgc"]["per_delta"])


def test_check_zero(files, capsys):
    assert run(capsys, "check", files["zero"])[0] == EXIT_OK


def test_check_half_strong(files, capsys):
    code, out, _ = run(capsys, "check", files["half"], "--strong", "--delta-grid", "0.5")
    rep = json.loads(out)
    assert code == EXIT_OK
    assert rep["spectral_radius"] == pytest.approx(0.5)
    assert rep["strong_sgc"]["delta"] == 0.5


def test_check_violation(files, capsys):
    code, out, _ = run(capsys, "check", files["two"])
    assert code == EXIT_NEGATIVE
    assert json.loads(out)["sgc"]["witness"] == [1.0, 1.0]


def test_input_errors(files, capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(capsys, "check", str(bad))[0] == EXIT_INPUT
    expr = gains(tmp_path, "expr", [["0", "r+"], ["r", "0"]])
    code, _, err = run(capsys, "check", expr)
    assert code == EXIT_INPUT and "error" in err
    assert run(capsys, "check", str(tmp_path / "missing.json"))[0] == EXIT_INPUT
    with pytest.raises(SystemExit) as exc:
        main(["check"])
    assert exc.value.code == EXIT_INPUT
    capsys.readouterr()


def test_xi_half(files, capsys, tmp_path):
    out_csv = tmp_path / "xi.csv"
    code, out, _ = run(capsys, "xi", files["half"], "--delta", "0.2", "--out", str(out_csv))
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["xi_at_1"] == pytest.approx(81 * math.sqrt(2), rel=1e-12)
    lines = out_csv.read_text().splitlines()
    assert lines[0].startswith("# ") and lines[1] == "r,xi"
    rows = [tuple(map(float, ln.split(","))) for ln in lines[2:]]
    assert len(rows) == 200
    assert rows[0][0] == pytest.approx(1e-6) and rows[-1][0] == pytest.approx(1e6)
    for r, v in rows:
        assert v == pytest.approx(81 * math.sqrt(2) * r, rel=1e-12)


def test_xi_zero_gains(files, capsys):
    code, out, _ = run(capsys, "xi", files["zero"], "--delta", "1")
    assert code == EXIT_OK
    rows = [tuple(map(float, ln.split(","))) for ln in out.splitlines()[2:]]
    # two steps of D o alpha^-1 = 2r on the diagonal vector, then the 2-norm
    for r, v in rows:
        assert v == pytest.approx(4 * math.sqrt(2) * r, rel=1e-12)


def test_xi_refused(files, capsys):
    code, out, _ = run(capsys, "xi", files["sat"], "--delta", "0.1")
    assert code == EXIT_NEGATIVE
    assert json.loads(out)["refused"] is True
    code, _, _ = run(capsys, "xi", files["sat"], "--delta", "0.1", "--force")
    assert code == EXIT_OK


def test_simulate_linear(capsys):
    code, out, _ = run(capsys, "simulate", "--system", "builtin:linear_scalar", "--x0", "1", "--t", "1")
    assert code == EXIT_OK
    last = out.strip().splitlines()[-1].split(",")
    assert float(last[1]) == pytest.approx(0.367879, abs=1e-6)


def test_simulate_planar_and_certify(files, capsys, tmp_path):
    traj = tmp_path / "p.csv"
    code, out, _ = run(
        capsys, "simulate", "--system", "builtin:planar_5_7", "--x0=-1,2", "--t", "5", "--dt", "0.01",
        "--out", str(traj),
    )
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["final_norm"] < math.sqrt(5)
    cert = tmp_path / "c.json"
    cert.write_text(json.dumps({"sigma": "r", "gamma": "r"}))
    code, out, _ = run(capsys, "certify", str(traj), str(cert))
    assert code == EXIT_OK and json.loads(out)["kind"] == "ugs"
    tight = tmp_path / "tight.json"
    tight.write_text(json.dumps({"beta": {"form": "exp", "M": 1, "lambda": 5}, "gamma": "0"}))
    code, out, _ = run(capsys, "certify", str(traj), str(tight))
    assert code == EXIT_NEGATIVE and json.loads(out)["label"] == "violated"


def test_certify_linear_iss(capsys, tmp_path):
    traj = tmp_path / "l.csv"
    run(capsys, "simulate", "--system", "builtin:linear_scalar", "--x0", "1", "--u", "const:0.5",
        "--t", "5", "--out", str(traj))
    cert = tmp_path / "c.json"
    cert.write_text(json.dumps({"beta": {"form": "exp", "M": 1, "lambda": 1}, "gamma": "r"}))
    code, out, _ = run(capsys, "certify", str(traj), str(cert))
    assert code == EXIT_OK and json.loads(out)["satisfied"]


def test_certify_bad_certificate(capsys, tmp_path):
    traj = tmp_path / "l.csv"
    run(capsys, "simulate", "--system", "builtin:linear_scalar", "--x0", "1", "--out", str(traj))
    cert = tmp_path / "c.json"
    cert.write_text(json.dumps({"delta": 1}))
    assert run(capsys, "certify", str(traj), str(cert))[0] == EXIT_INPUT


def test_counterexample_flow(files, capsys, tmp_path):
    sysf = tmp_path / "ce.json"
    code, out, _ = run(capsys, "counterexample", files["two"], "--out", str(sysf))
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["epsilon"] == pytest.approx(0.5, abs=1e-12)
    assert rep["equilibrium"] == [1.0, 1.0]
    code, out, _ = run(capsys, "simulate", "--system", str(sysf), "--x0", "1,1", "--t", "10", "--dt", "0.01")
    rows = [list(map(float, ln.split(",")))[1:3] for ln in out.splitlines()[2:]]
    assert all(abs(a - 1) < 1e-9 and abs(b - 1) < 1e-9 for a, b in rows)


def test_counterexample_refusals(files, capsys):
    code, out, _ = run(capsys, "counterexample", files["sat"])
    assert code == EXIT_NEGATIVE and json.loads(out)["status"] == "no SGC violation"


def test_identity_counterexample_degenerate(tmp_path, capsys):
    f = gains(tmp_path, "id", [["0", "r"], ["r", "0"]])
    code, out, _ = run(capsys, "counterexample", f)
    assert code == EXIT_NEGATIVE and "degenerate" in json.loads(out)["reason"]


def test_json_out_and_flag_position(files, capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "--seed", "3", "--json-out", str(a), "check", files["sat"])
    run(capsys, "check", files["sat"], "--seed", "3", "--json-out", str(b))
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["sgc"]["probe"]["seed"] == 3


def test_byte_identical_reports(files, capsys, tmp_path):
    outs = []
    for k in range(2):
        p = tmp_path / f"r{k}.json"
        run(capsys, "--json-out", str(p), "check", files["sat"], "--strong")
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point(files):
    proc = subprocess.run(
        [sys.executable, "-m", "smallgain", "check", files["zero"]], capture_output=True, text=True
    )
    assert proc.returncode == EXIT_OK
    assert json.loads(proc.stdout)["sgc"]["status"] == HOLDS

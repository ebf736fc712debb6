import csv
import io
import json
import math
import subprocess
import sys

import pytest

from dmcbounds.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_z(capsys):
    code, out, _ = run(capsys, "analyze", "--channel", "z:0.5")
    doc = json.loads(out)
    assert code == 0 and doc["schema_version"] == "1.0" and doc["command"] == "analyze"
    assert doc["results"]["c"] == pytest.approx(math.log(1.25), abs=1e-10)
    assert doc["results"]["q_star"] == pytest.approx([0.8, 0.2], abs=1e-8)


def test_bits_conversion(capsys):
    _, out, _ = run(capsys, "analyze", "--channel", "z:0.5", "--bits")
    doc = json.loads(out)
    assert doc["results"]["c"] == pytest.approx(math.log2(1.25), abs=1e-10)


def test_usage_error_exit_2(capsys):
    code, out, err = run(capsys, "bounds", "--channel", "bsc:1.5")
    assert code == 2 and out == ""
    rec = json.loads(err)
    assert rec["error"]["kind"] == "usage" and rec["error"]["flag"] == "--channel"
    code, _, err = run(capsys, "bounds", "--channel", "bsc:0.1", "--frob")
    assert code == 2 and json.loads(err)["error"]["flag"] == "--frob"


def test_lattice_rejection_exit_1(capsys):
    code, out, _ = run(capsys, "bounds", "--channel", "z:0.5")
    rec = json.loads(out)
    assert code == 1 and rec["error"]["code"] == "lattice"
    code, out, _ = run(capsys, "bounds", "--channel", "z:0.5", "--lattice", "advisory")
    assert code == 0 and json.loads(out)["results"]["a3_holds"] is False


def test_bounds_weakly_symmetric(capsys):
    code, out, _ = run(capsys, "bounds", "--channel", "additive-mod-3:0.7,0.2,0.1", "--eps", "1e-3")
    assert code == 0
    assert json.loads(out)["results"]["gap"] == pytest.approx(1.0, abs=1e-9)


def test_sweep_csv(capsys, tmp_path):
    target = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", "--family", "bsc", "--grid", "0.1:0.3:0.1", "--eps", "1e-3",
                     "--format", "csv", "-o", str(target))
    rows = list(csv.DictReader(io.StringIO(target.read_text())))
    assert code == 0 and len(rows) == 3 and "error" in rows[0]


def test_np_beta_and_tail(capsys):
    code, out, _ = run(capsys, "np-beta", "--channel", "bsc:0.11", "--n", "200", "--alpha", "0.99",
                       "--mode", "both")
    res = json.loads(out)["results"]
    assert code == 0 and res["exact"]["log_beta"] < 0
    code, out, _ = run(capsys, "tail", "--model", "binomial:2000:0.5", "--a", "0.55")
    assert code == 0


def test_simulate_deterministic(capsys):
    args = ("simulate", "--channel", "bsc:0.11", "--n", "100", "--trials", "2000", "--seed", "4")
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b and json.loads(a)["results"]["simulation"]["trials"] == 2000


def test_audit_passes(capsys):
    code, out, _ = run(capsys, "audit", "--channel", "z:0.5", "--samples", "500")
    assert code == 0 and json.loads(out)["results"]["passed"]


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "dmcbounds.cli", "analyze", "--channel", "bsc:0.11"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["command"] == "analyze"

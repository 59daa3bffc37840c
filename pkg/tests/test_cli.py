import csv
import hashlib
import json
import subprocess
import sys

import pytest

from stochvolterra import cli


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.run_cli([*args, "--out", str(out)])
    return code, out


def manifest_ok(out):
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["name"]: f for f in man["files"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(listed) == on_disk
    for name, f in listed.items():
        data = (out / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == f["sha256"]
        assert len(data) == f["bytes"]
    return man


def test_resolvent_on_a_non_dyadic_grid(tmp_path):
    code, out = run(tmp_path, "resolvent", "--kernel", "frac:1.5", "--grid", "13")
    assert code == 0
    rows = list(csv.reader(open(out / "resolvent.csv")))
    assert rows[0] == ["mode", "mu", "t", "s"] and len(rows) == 15
    man = manifest_ok(out)
    assert man["command"] == "resolvent" and man["seed"] is None


def test_bound_check_example(tmp_path):
    code, out = run(tmp_path, "bound-check", "--theorem", "1", "--kernel", "constant", "--modes", "1",
                    "--alpha", "0.3", "--p", "4", "--paths", "2000", "--grid", "1024", "--T", "1",
                    "--seed", "7")
    assert code == 0
    rep = json.loads((out / "bound_thm1.json").read_text())
    assert rep["ratio_corrected"] < 1 and rep["pass"]
    assert rep["layer_cake"]["agree"]
    assert manifest_ok(out)["seed"] == 7


@pytest.mark.parametrize("args", [
    ["bound-check", "--theorem", "1"],
    ["tail-check"],
    ["bound-check", "--seed", "1"],
    ["resolvent", "--kernel", "gauss"],
    ["resolvent", "--grid", "0"],
    ["resolvent", "--spectrum", "list:3,1"],
    ["resolvent", "--psi", "1,2", "--modes", "3"],
    ["bound-check", "--theorem", "2", "--seed", "1", "--alpha", "0.2"],
    ["converge", "--grid", "100"],
    ["selftest", "--seed", "-1"],
    ["frobnicate"],
])
def test_invalid_configuration_exits_2(tmp_path, args):
    assert cli.run_cli([*args, "--out", str(tmp_path / "o")]) == 2


def test_failed_invariant_exits_1_and_still_writes(tmp_path, monkeypatch):
    real = cli.RUNNERS["resolvent"]

    def failing(s, w):
        real(s, w)
        return False

    monkeypatch.setitem(cli.RUNNERS, "resolvent", failing)
    code, out = run(tmp_path, "resolvent", "--grid", "8")
    assert code == 1
    assert (out / "resolvent.json").exists()
    manifest_ok(out)


def test_config_file_flags_override_and_round_trip(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# a comment\nkernel = exp:2\ngrid=64\nseed=5\ntheorem=1\npaths=300\n")
    code, out = run(tmp_path, "bound-check", "--config", str(cfg), "--grid", "32", name="a")
    assert code == 0
    echo = (out / "config.txt").read_text()
    assert "grid=32" in echo and "kernel=exp:2" in echo
    code2, out2 = run(tmp_path, "bound-check", "--config", str(out / "config.txt"), name="b")
    assert code2 == 0
    assert (out / "bound_thm1.json").read_bytes() == (out2 / "bound_thm1.json").read_bytes()
    assert (out / "bound_summary.csv").read_bytes() == (out2 / "bound_summary.csv").read_bytes()


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    assert cli.run_cli(["resolvent", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("just words\n")
    assert cli.run_cli(["resolvent", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.run_cli(["resolvent", "--config", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2


def test_dump_paths(tmp_path):
    code, out = run(tmp_path, "factorize-check", "--grid", "32", "--paths", "200", "--seed", "2",
                    "--modes", "2", "--dump-paths", "3")
    assert code in (0, 1)
    rows = list(csv.reader(open(out / "paths.csv")))
    assert rows[0] == ["path", "mode", "t", "Y", "Y_alpha", "Z1", "Z2", "X"]
    assert len(rows) == 1 + 3 * 2 * 33
    manifest_ok(out)


def test_submult_and_converge_reports(tmp_path):
    code, out = run(tmp_path, "submult-check", "--grid", "64", "--modes", "2", name="s")
    assert code == 0
    rep = json.loads((out / "submult.json").read_text())
    assert rep["checks"]["constant_kernel_no_violations"]
    code, out = run(tmp_path, "converge", "--grid", "256", name="c")
    assert code == 0
    assert {r[0] for r in csv.reader(open(out / "converge.csv"))} >= {"resolvent", "z1z2", "quantity"}


def test_tail_check_outputs(tmp_path):
    code, out = run(tmp_path, "tail-check", "--seed", "3", "--grid", "64", "--paths", "4000")
    rows = list(csv.reader(open(out / "tail.csv")))
    assert rows[0] == ["delta", "p_emp", "wilson_lo", "wilson_hi", "bound"] and len(rows) == 11
    rep = json.loads((out / "tail.json").read_text())
    assert code == (0 if rep["pass"] else 1)
    assert rep["fitted_C"] > 0


def test_selftest_reports_are_deterministic(tmp_path):
    a = run(tmp_path, "selftest", "--seed", "5", name="a")
    b = run(tmp_path, "selftest", "--seed", "5", "--workers", "2", name="b")
    assert a[0] == b[0] == 0
    assert (a[1] / "selftest.json").read_bytes() == (b[1] / "selftest.json").read_bytes()
    assert "timestamp" not in (a[1] / "selftest.json").read_text()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "stochvolterra", "resolvent", "--grid", "8",
                        "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert r.returncode == 0 and "resolvent: pass" in r.stdout

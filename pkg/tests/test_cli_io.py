import json

import numpy as np
import pytest

from redres.cli_io import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, main,
                           read_plan_csv)

FAST = ["--rate", "10", "--m", "80"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_plan_writes_csv_and_summary(tmp_path, capsys):
    code, out, _ = run(capsys, "plan", "--path", "test1", *FAST, "--out", str(tmp_path))
    assert code == EXIT_OK and out.startswith("loss=")
    plan = read_plan_csv(tmp_path / "plan.csv")
    assert plan.joints.shape == (101, 7) and plan.t0 == 0.1
    text = (tmp_path / "plan.csv").read_text().splitlines()
    assert text[0].startswith("# loss=") and "i,t,q1" in "\n".join(text)


def test_plan_is_byte_reproducible(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "plan", "--path", "test2", *FAST, "--out", str(tmp_path / d))[0] == 0
    assert (tmp_path / "a/plan.csv").read_bytes() == (tmp_path / "b/plan.csv").read_bytes()


def test_plan_circular_summary(tmp_path, capsys):
    code, out, _ = run(capsys, "plan-circular", "--path", "test2", "--rate", "10", "--m", "400",
                       "--out", str(tmp_path))
    assert code == EXIT_OK
    assert out.startswith("baseline_breaks=1, improved=true, new_start=")
    plan = read_plan_csv(tmp_path / "plan.csv")
    assert plan.rows is not None and plan.breakpoints == 0


def test_feasibility_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "feasibility", "--path", "test1", *FAST, "--out", str(tmp_path))
    assert code == EXIT_OK and "rows=101 cols=80" in out
    assert (tmp_path / "feasibility.pgm").read_bytes().startswith(b"P5\n80 101\n255\n")


def test_simulate_round_trip(tmp_path, capsys):
    assert run(capsys, "plan", "--path", "test1", *FAST, "--out", str(tmp_path))[0] == 0
    code, out, _ = run(capsys, "simulate", "--path", "test1", *FAST, "--out", str(tmp_path),
                       "--plan", str(tmp_path / "plan.csv"))
    assert code == EXIT_OK and "violations=0" in out
    header = (tmp_path / "commands.csv").read_text().splitlines()[0]
    assert header == "cycle,t," + ",".join(f"q{i}" for i in range(1, 8))


@pytest.mark.parametrize("workers", [1, 2])
def test_validate(capsys, workers):
    code, out, _ = run(capsys, "validate", "--trials", "12", "--seed", "3",
                       "--workers", str(workers))
    assert code == EXIT_OK and out.startswith("trials=12 seed=3 mismatches=0")


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("path: test1\nrate: 10\nm: 50\n")
    code, out, _ = run(capsys, "feasibility", "--config", str(cfg), "--out", str(tmp_path))
    assert code == EXIT_OK and "cols=50" in out
    # flags override the file
    code, out, _ = run(capsys, "feasibility", "--config", str(cfg), "--m", "40",
                       "--out", str(tmp_path))
    assert "cols=40" in out


@pytest.mark.parametrize("argv,code", [
    (["plan", "--m", "1"], EXIT_CONFIG),
    (["plan", "--t0", "0.3"], EXIT_CONFIG),
    (["plan", "--M", "1.0", "--rate", "10", "--m", "20"], EXIT_CONFIG),
    (["plan-circular", "--path", "{wp}", "--tmax", "1", "--t0", "0.5", "--m", "20"], EXIT_CONFIG),
    (["plan", "--path", "{far}", "--tmax", "1", "--t0", "0.5", "--m", "20"], EXIT_INFEASIBLE),
    (["plan", "--robot", "{missing}"], EXIT_IO),
    (["plan", "--config", "{bad_cfg}"], EXIT_CONFIG),
])
def test_exit_codes(tmp_path, capsys, argv, code):
    (tmp_path / "wp.csv").write_text("t,x,y,z,qw,qx,qy,qz\n0,0.5,0,0.3,0,1,0,0\n1,0.6,0,0.3,0,1,0,0\n")
    (tmp_path / "far.csv").write_text("t,x,y,z,qw,qx,qy,qz\n0,2,0,0.3,0,1,0,0\n1,2.1,0,0.3,0,1,0,0\n")
    (tmp_path / "bad.yaml").write_text("nonsense_key: 1\n")
    names = {"wp": tmp_path / "wp.csv", "far": tmp_path / "far.csv",
             "missing": tmp_path / "nope.yaml", "bad_cfg": tmp_path / "bad.yaml"}
    argv = [a.format(**names) for a in argv] + ["--out", str(tmp_path / "o")]
    got, _, err = run(capsys, *argv)
    assert got == code
    assert "error" in json.loads(err.strip().splitlines()[-1])


def test_simulate_rejects_wrong_length_plan(tmp_path, capsys):
    assert run(capsys, "plan", "--path", "test1", *FAST, "--out", str(tmp_path))[0] == 0
    code, _, _ = run(capsys, "simulate", "--path", "test1", "--rate", "100", "--m", "80",
                     "--out", str(tmp_path), "--plan", str(tmp_path / "plan.csv"))
    assert code == EXIT_CONFIG


def test_simulate_absorbs_edited_jump(tmp_path, capsys):
    """A hand-edited plan that jumps is still followed inside the limits; the
    tracking error shows the deviation instead."""
    assert run(capsys, "plan", "--path", "test1", *FAST, "--out", str(tmp_path))[0] == 0
    f = tmp_path / "plan.csv"
    lines = f.read_text().splitlines()
    k = next(i for i, l in enumerate(lines) if l.startswith("50,"))
    cells = lines[k].split(",")
    cells[2] = repr(float(cells[2]) + 0.5)
    lines[k] = ",".join(cells)
    f.write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "simulate", "--path", "test1", *FAST, "--out", str(tmp_path),
                       "--plan", str(f))
    assert code == EXIT_OK and "violations=0" in out
    max_error = float(out.split("max_error=")[1])
    assert max_error > 1e-3
    err = np.loadtxt(tmp_path / "errors.csv", delimiter=",", skiprows=1, ndmin=2)
    assert err.shape[0] == 101

import csv
import json

import pytest

from khessian.cli import main, run
from khessian.config import parse_config

QUAD = {"experiment": "solve", "n": 2, "k": 2,
        "domain": {"shape": "cylinder", "radius": 1.0, "t_start": -0.25},
        "grid": {"h": 0.25, "tau": 0.125, "refinements": 2},
        "exact": "(x1^2+x2^2)/2 - t", "m1": 0.5}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def report(out):
    return json.loads((out / "report.json").read_text())


def test_quadratic_solve(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", write(tmp_path, QUAD), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "convergence.csv")))
    assert [float(r["h"]) for r in rows] == [0.25, 0.125]
    assert all(float(r["error"]) <= 1e-12 for r in rows)
    rep = report(out)
    assert rep["status"] == "passed" and rep["invariants"] == {"admissible": True}
    levels = sorted(out.glob("solution_*.csv"))
    assert len(levels) == 5  # finest grid: t = -0.25 .. 0 in steps of 1/16


def test_solution_csv_format(tmp_path):
    out = tmp_path / "out"
    main(["solve", "--config", write(tmp_path, QUAD), "--out", str(out)])
    with open(out / "solution_4.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["level", "t", "node", "x1", "x2", "u", "ut", "cone_margin"]
    for r in rows:
        # shortest round-trip representation
        assert repr(float(r["u"])) == r["u"]
        exact = (float(r["x1"]) ** 2 + float(r["x2"]) ** 2) / 2 - float(r["t"])
        assert abs(float(r["u"]) - exact) <= 1e-12
        if r["ut"]:
            assert float(r["ut"]) == pytest.approx(-1.0, abs=1e-9)
            assert float(r["cone_margin"]) > 0


def test_report_is_deterministic(tmp_path):
    path = write(tmp_path, QUAD)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["solve", "--config", path, "--out", str(a), "--seed", "11"])
    main(["solve", "--config", path, "--out", str(b), "--seed", "11"])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert report(a)["seed"] == 11 and report(a)["parameters"]["seed"] == 11
    for f in a.glob("*.csv"):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_timestamps_flag(tmp_path):
    doc = dict(QUAD, output={"timestamps": True})
    out = tmp_path / "o"
    main(["solve", "--config", write(tmp_path, doc), "--out", str(out)])
    assert "elapsed_seconds" in report(out)
    out2 = tmp_path / "o2"
    main(["solve", "--config", write(tmp_path, QUAD, "q.json"), "--out", str(out2)])
    assert "elapsed_seconds" not in report(out2)


def test_output_dir_from_config(tmp_path):
    doc = dict(QUAD, output={"dir": str(tmp_path / "from_cfg")})
    assert main(["solve", "--config", write(tmp_path, doc)]) == 0
    assert (tmp_path / "from_cfg" / "report.json").exists()


def test_pogorelov_constant_data(tmp_path):
    doc = {"experiment": "verify-pogorelov", "n": 2, "k": 1,
           "domain": {"shape": "paraboloid", "r": 1},
           "grid": {"h": 0.125, "tau": 0.0625, "refinements": 2},
           "psi": "1", "u0": 0, "m1": 0.001}
    out = tmp_path / "p"
    assert main(["verify-pogorelov", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    rep = report(out)
    assert rep["invariants"]["pogorelov_plateau"]
    assert rep["metrics"]["sup_pog_changes"][0] <= 0.10


def test_liouville_box_too_small(tmp_path):
    doc = {"experiment": "verify-liouville", "n": 2, "k": 2,
           "domain": {"shape": "cylinder", "radius": 0.5, "t_start": -0.25},
           "grid": {"h": 0.125, "tau": 0.015625}, "exact": "x1^2+x2^2 - t",
           "m1": 0.4, "m2": 2, "A1": 0.5, "A2": 1, "B": 1, "alpha": 0.5, "R": [4],
           "h_target": 0.03125}
    out = tmp_path / "l"
    assert main(["verify-liouville", "--config", write(tmp_path, doc), "--out", str(out)]) == 2
    rep = report(out)
    assert rep["status"] == "invalid" and "box too small" in rep["diagnostics"]


def test_liouville_exact_quadratic(tmp_path):
    doc = {"experiment": "verify-liouville", "n": 2, "k": 2,
           "domain": {"shape": "cylinder", "radius": 3.0, "t_start": -1.0},
           "grid": {"h": 0.125, "tau": 0.015625},
           "exact": "0.6*x1^2+0.9*x2^2+0.5 - 0.462962962962963*t",
           "m1": 0.4, "m2": 2, "A1": 0.5, "A2": 1, "B": 1, "alpha": 0.5, "R": [2, 4]}
    out = tmp_path / "l"
    assert main(["verify-liouville", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    rep = report(out)
    assert rep["invariants"] == {"ut_constant": True, "scaling_identity": True,
                                 "non_increasing": True}
    assert all(e["semi_d2u"] <= 1e-10 for e in rep["metrics"]["entries"])


def test_solver_failure_exits_1(tmp_path):
    doc = {"experiment": "solve", "n": 2, "k": 2,
           "domain": {"shape": "cylinder", "radius": 1.0, "t_start": -0.25},
           "grid": {"h": 0.25, "tau": 0.125}, "psi": "0", "g": "(x1^2+x2^2)/2", "m1": 0.5}
    out = tmp_path / "e"
    assert main(["solve", "--config", write(tmp_path, doc), "--out", str(out)]) == 1
    rep = report(out)
    assert rep["status"] == "error" and rep["error"] in ("ConeCollapseError", "NonconvergenceError")


def test_selftest(tmp_path):
    doc = {"experiment": "selftest", "n": 2, "k": 2, "m1": 0.5, "m2": 2, "C0": 5,
           "samples": 500, "seed": 1}
    out = tmp_path / "s"
    assert main(["selftest", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    assert all(report(out)["invariants"].values())


def test_config_errors_exit_2(tmp_path, capsys):
    bad = dict(QUAD, A1=2, A2=1, n=7)
    assert main(["solve", "--config", write(tmp_path, bad)]) == 2
    err = capsys.readouterr().err
    assert "$.n" in err and "$.A2" in err
    assert main(["verify-gradient", "--config", write(tmp_path, QUAD, "q.json")]) == 2


def test_missing_config_and_bad_seed(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 1
    with pytest.raises(SystemExit):
        main(["solve", "--config", write(tmp_path, QUAD), "--seed", "-1"])


def test_run_accepts_parsed_config(tmp_path):
    cfg = parse_config(json.dumps(dict(QUAD, grid={"h": 0.25, "tau": 0.125})))
    assert run(cfg, tmp_path) == 0
    assert not (tmp_path / "solution_5.csv").exists()

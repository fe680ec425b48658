import csv
import json
import math

import numpy as np
import pytest

from conftest import SOLVABLE, exact_h
from nhim.cli import RunManifest, main

FAST = ["--horizon", "20", "--step", "0.01", "--tol", "1e-10"]


@pytest.fixture
def files(tmp_path):
    cfg = tmp_path / "system.cfg"
    cfg.write_text(SOLVABLE)
    pert = tmp_path / "pert.cfg"
    pert.write_text("df1 = cos(x1)\ndelta = 0.01\n")
    return cfg, pert


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_solve_writes_manifold_and_manifest(files, tmp_path, capsys):
    cfg, _ = files
    out = tmp_path / "run"
    assert main(["solve", "--config", str(cfg), "--grid", "64", "--out", str(out), *FAST]) == 0
    header, data = read_csv(out / "manifold.csv")
    assert header == ["x1", "h1"]
    assert data.shape == (64, 2)
    assert np.abs(data[:, 1] - exact_h(data[:, 0])).max() <= 1e-6
    m = RunManifest.from_json((out / "manifest.json").read_text())
    assert m.grid == [64] and m.horizon == 20.0 and m.command == "solve"
    assert "solved 64 nodes" in capsys.readouterr().out


def test_csv_uses_17_significant_digits(files, tmp_path):
    cfg, _ = files
    out = tmp_path / "run"
    main(["solve", "--config", str(cfg), "--grid", "8", "--out", str(out), *FAST])
    line = (out / "manifold.csv").read_text().splitlines()[2]
    x, h = line.split(",")
    assert x == format(2 * math.pi / 8, ".17g")
    assert float(h) == float(format(float(h), ".17g"))


def test_solve_is_deterministic_and_manifest_reproduces(files, tmp_path):
    cfg, _ = files
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    main(["solve", "--config", str(cfg), "--grid", "16", "--out", str(a), *FAST])
    main(["solve", "--config", str(cfg), "--grid", "16", "--out", str(b), *FAST])
    main(["solve", "--manifest", str(a / "manifest.json"), "--out", str(c)])
    first = (a / "manifold.csv").read_bytes()
    assert first == (b / "manifold.csv").read_bytes() == (c / "manifold.csv").read_bytes()


def test_solve_default_horizon_from_rates(files, tmp_path):
    cfg, _ = files
    out = tmp_path / "run"
    assert main(["solve", "--config", str(cfg), "--grid", "8", "--step", "0.01",
                 "--window", "5", "--out", str(out)]) == 0
    T = RunManifest.from_json((out / "manifest.json").read_text()).horizon
    # tail bound exp(-T) * sup|f| below tol/10 with sup|f| = 0.1
    assert math.exp(-T) * 0.1 < 1e-11
    assert T < 25


def test_missing_f_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dim_x = 1\ndim_y = 1\nvx1 = 1\nA11 = -1\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), *FAST]) == 1
    assert "missing f1" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg"), *FAST]) == 1
    assert main(["solve", *FAST]) == 1


def test_large_delta_is_solver_error(files, tmp_path, capsys):
    cfg, pert = files
    pert.write_text("df1 = cos(x1)\ndelta = 10\n")
    code = main(["solve", "--config", str(cfg), "--perturb", str(pert), "--grid", "4",
                 "--out", str(tmp_path / "o"), *FAST])
    assert code == 2
    err = capsys.readouterr().err
    assert err.count("left admissible neighborhood") == 4


def test_rates_command(files, tmp_path, capsys):
    cfg, _ = files
    out = tmp_path / "rates"
    assert main(["rates", "--config", str(cfg), "--r", "1,100", "--window", "5",
                 "--out", str(out)]) == 0
    with open(out / "rate_samples.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t" and "normal_0" in rows[0]
    # backward-only rows leave the normal columns empty
    backward = [r for r in rows[1:] if float(r[0]) < 0]
    assert backward and all(r[rows[0].index("normal_0")] == "" for r in backward)
    with open(out / "rates.csv") as fh:
        table = {row[0]: row[1] for row in list(csv.reader(fh))[1:]}
    assert float(table["rho_minus"]) == pytest.approx(-1.0, abs=1e-3)
    assert table["r_max"] == "inf"
    assert table["pass[r=100]"] == "1"
    assert "PASS" in (out / "rates.txt").read_text()


def test_rates_gap_failure_exit_code(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("dim_x=1\ndim_y=1\nvx1=1+0.5*sin(x1)\nA11=-0.05\nf1=0\n")
    # normal rate -0.05 cannot dominate a nonzero tangential rate at r = 100
    code = main(["rates", "--config", str(cfg), "--r", "100", "--window", "10",
                 "--out", str(tmp_path / "r")])
    assert code in (2, 3)


def test_verify_command(files, tmp_path, capsys):
    cfg, _ = files
    run = tmp_path / "run"
    main(["solve", "--config", str(cfg), "--grid", "64", "--out", str(run), *FAST])
    out = tmp_path / "verify"
    assert main(["verify", "--config", str(cfg), "--manifold", str(run / "manifold.csv"),
                 "--max-residual", "1e-3", "--out", str(out)]) == 0
    header, data = read_csv(out / "residual.csv")
    assert header == ["x1", "h1", "residual"] and data.shape == (64, 3)
    assert data[:, 2].max() <= 1e-3
    assert main(["verify", "--config", str(cfg), "--manifold", str(run / "manifold.csv"),
                 "--max-residual", "1e-9", "--out", str(out)]) == 3


def test_verify_bad_manifold_file(files, tmp_path):
    cfg, _ = files
    bad = tmp_path / "m.csv"
    bad.write_text("x1,h1\n0,0\n0.5,0\n")
    assert main(["verify", "--config", str(cfg), "--manifold", str(bad),
                 "--out", str(tmp_path / "v")]) == 3


def test_sweep_command(files, tmp_path, capsys):
    cfg, pert = files
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--perturb", str(pert), "--grid", "16",
                 "--deltas", "0,0.01,0.02,0.04", "--out", str(out), *FAST]) == 0
    header, data = read_csv(out / "sweep.csv")
    assert header == ["delta", "dist0", "dist1"]
    assert data[0, 1] == 0.0
    assert data[3, 1] / data[1, 1] == pytest.approx(4.0, rel=1e-2)
    assert "slope" in capsys.readouterr().out


def test_sweep_requires_zero_and_perturbation(files, tmp_path):
    cfg, pert = files
    assert main(["sweep", "--config", str(cfg), "--perturb", str(pert), "--deltas", "0.1",
                 *FAST]) == 1
    assert main(["sweep", "--config", str(cfg), "--deltas", "0,0.1", *FAST]) == 1


def test_sweep_failure_exit_code(files, tmp_path):
    cfg, pert = files
    code = main(["sweep", "--config", str(cfg), "--perturb", str(pert), "--grid", "4",
                 "--deltas", "0,10", "--out", str(tmp_path / "s"), *FAST])
    assert code == 2
    _, data = read_csv(tmp_path / "s" / "sweep.csv")
    assert math.isnan(data[1, 1])


def test_manifest_json_round_trip():
    m = RunManifest(command="solve", config="a.cfg", grid=[8, 4], deltas=[0.0, 0.1])
    assert RunManifest.from_json(m.to_json()) == m
    with pytest.raises(ValueError):
        RunManifest.from_json(json.dumps({"command": "solve", "config": "a", "bogus": 1}))

import csv
import hashlib
import json
from pathlib import Path

import pytest

from nuelab.cli import ConfigError, load_config, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="x.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_constants_ledger_has_kappa_below_one(tmp_path):
    assert main(["constants", str(CONFIGS / "base.cfg"), "--out-dir", str(tmp_path)]) == 0
    rows = {r[0]: r for r in _rows(tmp_path / "ledger.csv")}
    assert rows["name"] == ["name", "value", "provenance"]
    assert 0 < float(rows["kappa"][1]) < 1


def test_density_of_doubling_is_uniform(tmp_path):
    assert main(["density", "--config", str(CONFIGS / "doubling.cfg"), "--out-dir", str(tmp_path)]) == 0
    (head, row) = _rows(tmp_path / "summary.csv")
    assert head == ["pipeline", "cells", "residual", "l1_to_uniform"]
    assert float(row[2]) == 0.0 and float(row[3]) == 0.0
    dens = _rows(tmp_path / "density.csv")
    assert dens[0] == ["cell_id", "x", "value"] and len(dens) == 1025
    assert all(float(r[2]) == 1.0 for r in dens[1:])


def test_single_point_sweep(tmp_path):
    assert main(["stability", str(CONFIGS / "sweep.cfg"), "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "stability.csv")
    assert rows[0] == ["a", "distance", "floor"]
    assert len(rows) == 2 and float(rows[1][0]) == 0.0 and float(rows[1][1]) == 0.0


def test_outputs_are_reproducible_and_listed(tmp_path):
    args = ["pliss", str(CONFIGS / "pliss.cfg"), "--deterministic", "--seed", "4"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "pliss.csv").read_bytes()
    assert a == (tmp_path / "b" / "pliss.csv").read_bytes()
    assert b"\r" not in a
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 4 and man["exit_code"] == 0 and man["threads"] == 1
    assert set(man["versions"]) == {"python", "numpy", "scipy", "nuelab"}
    assert man["wall_time_s"] >= 0
    for name, digest in man["files"].items():
        assert hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest() == digest
    # a different seed changes the instances but not the verdicts
    assert main(["pliss", str(CONFIGS / "pliss.cfg"), "--seed", "5", "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "pliss.csv").read_bytes() != a


def test_unknown_keys_are_rejected(tmp_path):
    p = _write(tmp_path, "[run]\nseed = 1\nbogus = 2\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(p)
    assert main(["density", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    with pytest.raises(ConfigError, match="sections"):
        load_config(_write(tmp_path, "[maps]\nname = tent\n"))
    with pytest.raises(ConfigError, match="lamda"):
        load_config(_write(tmp_path, "[constants]\nlamda = 1\n"))
    with pytest.raises(ConfigError, match="map.name"):
        load_config(_write(tmp_path, "[map]\nname = logistic\n"))


def test_out_of_range_values_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="c1 < c2"):
        load_config(_write(tmp_path, "[run]\nc1 = 2\nc2 = 1\n"))
    with pytest.raises(ConfigError, match="grid"):
        load_config(_write(tmp_path, "[run]\ngrid = 0\n"))
    with pytest.raises(ConfigError, match="as"):
        load_config(_write(tmp_path, "[run]\nseed = zero\n"))


def test_kind_must_match_command(tmp_path):
    assert main(["tower", str(CONFIGS / "doubling.cfg"), "--out-dir", str(tmp_path)]) == 2


def test_validation_failure_exit_code(tmp_path, capsys):
    # sigma1 above k^2 = 9 cannot hold for the undeformed torus map
    p = _write(tmp_path, "[map]\nname = example\n[constants]\nsigma1 = 10\n[run]\nsamples = 200\ncert_grid = 64\n")
    assert main(["validate-map", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    assert "volume_expanding" in capsys.readouterr().err
    rows = _rows(tmp_path / "o" / "validate_map.csv")
    assert rows[0] == ["condition", "margin", "worst_point_x", "worst_point_y", "pass"]
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["exit_code"] == 2 and "validate_map.csv" in man["files"]


def test_nonconvergence_exit_code(tmp_path):
    p = _write(tmp_path, "[map]\nname = chebyshev\n[run]\ngrid = 512\ntol = 1e-15\n")
    from nuelab import density

    orig = density.stationary_density

    def capped(T, tol=1e-10, max_iter=20000):
        return orig(T, tol, max_iter=3)

    density.stationary_density = capped
    try:
        assert main(["density", str(p), "--out-dir", str(tmp_path / "o")]) == 3
    finally:
        density.stationary_density = orig


def test_tower_commands_on_doubling(tmp_path):
    cfg = str(CONFIGS / "tower_doubling.cfg")
    assert main(["tower", cfg, "--out-dir", str(tmp_path / "t")]) == 0
    text = (tmp_path / "t" / "partition.csv").read_text().splitlines()
    assert text[0] == "# map=doubling" and "cell_id,x,y,status,R_or_t" in text
    assert main(["validate-tower", cfg, "--out-dir", str(tmp_path / "v")]) == 0
    summary = dict(_rows(tmp_path / "v" / "summary.csv")[1:])
    assert float(summary["max_distortion"]) == 0.0


def test_hyperbolic_times_and_frequency(tmp_path):
    p = _write(tmp_path, "[map]\nname = doubling\n[run]\nsigma = 0.6\nhorizon = 30\nsamples = 200\ntheta = 1\n")
    assert main(["hyptimes", str(p), "--out-dir", str(tmp_path / "h")]) == 0
    rows = _rows(tmp_path / "h" / "hyptimes.csv")
    assert len(rows) == 31 and all(r[1] == "1" for r in rows[1:])
    assert main(["frequency", str(p), "--out-dir", str(tmp_path / "f")]) == 0
    assert main(["tail", str(p), "--out-dir", str(tmp_path / "t")]) == 0
    tail = _rows(tmp_path / "t" / "tail.csv")
    assert tail[0] == ["n", "mhat", "stderr"] and float(tail[1][1]) == 0.0

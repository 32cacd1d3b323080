import json
import subprocess
import sys

import pytest

from nlkg.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from nlkg.config import (ConfigError, RunConfig, config_from_dict, dumps, load_config,
                         write_resolved)

SMALL = ["--r-max", "30", "--n", "1024", "--dt", "2e-3"]


def test_default_config_resolves():
    cfg = load_config(None)
    assert cfg.grid.n == 6144 and cfg.integrator.dt_max == 1e-3
    th = cfg.to_dict()["resolved_thresholds"]
    assert th["delta_X"] == th["delta_E"] == 0.5
    assert th["R_star"] == 0.0625 and th["eps_star"] == 0.015625


def test_config_round_trip(tmp_path):
    cfg = config_from_dict({"grid": {"n": 2048}, "thresholds": {"eta_scat": 0.04}, "seed": 7})
    path = write_resolved(cfg, tmp_path)
    back = load_config(str(path))
    assert back.to_dict() == cfg.to_dict()
    assert path.read_text() == dumps(back.to_dict())


def test_empty_config_file_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("  \n")
    assert load_config(str(p)).to_dict() == RunConfig().validate().to_dict()


@pytest.mark.parametrize("bad", [
    {"grid": {"n": 1.5}},
    {"grid": {"bogus": 1}},
    {"nonsense": 1},
    {"thresholds": {"delta_X": 0.8}},
    {"thresholds": {"delta_S": 0.1}},
    {"integrator": {"dt_max": -1.0}},
    {"integrator": {"dt_min": 1.0}},
    {"seed": True},
])
def test_config_validation_errors(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"grid": {"n": 10,}}')
    with pytest.raises(ConfigError, match="line 1 column"):
        load_config(str(p))


def test_cli_validation_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"thresholds": {"delta_X": 0.8}}')
    out = str(tmp_path / "o")
    assert main(["classify", "--config", str(bad), "--out", out]) == EXIT_VALIDATION
    bad.write_text("{oops")
    assert main(["classify", "--config", str(bad), "--out", out]) == EXIT_VALIDATION
    assert main(["no-such-command"]) == EXIT_VALIDATION
    assert main(["classify", "--threads", "0", "--out", out] + SMALL) == EXIT_VALIDATION
    # horizon too long for the small box trips the boundary guard
    assert main(["evolve", "--T", "40", "--out", out] + SMALL) == EXIT_VALIDATION
    assert "validation failure" in capsys.readouterr().err


def test_cli_numerical_exit_code(tmp_path):
    # a tiny unstable mode never leaves the delta_X ball within T: no ejection episode
    out = str(tmp_path / "o")
    args = ["audit", "--samples", "0", "--mode-amplitude", "1e-9", "--T", "3", "--out", out] + SMALL
    assert main(args) == EXIT_NUMERICAL


def test_cli_spectrum(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["spectrum", "--bs-m", "2", "--out", str(out)] + SMALL) == EXIT_OK
    text = capsys.readouterr().out
    assert "BS gap: OK (second eigenvalue < 0.98)" in text
    assert "n_neg = 1" in text
    d = json.loads((out / "spectrum.json").read_text())
    assert d["gap_ok"] and d["n_neg"] == 1
    assert (out / "resolved-config.json").exists()


def test_cli_classify_aQ_is_set_2(tmp_path, capsys):
    out = tmp_path / "o"
    args = ["classify", "--data", "aQ", "--a", "1.2", "--T", "14", "--out", str(out)] + SMALL
    assert main(args) == EXIT_OK
    assert "set_index = 2" in capsys.readouterr().out
    first = (out / "classify.json").read_bytes()
    assert json.loads(first)["set_index"] == 2
    assert main(args) == EXIT_OK
    assert (out / "classify.json").read_bytes() == first


def test_cli_evolve_writes_record(tmp_path):
    from nlkg.evolution import TrajectoryRecord
    out = tmp_path / "o"
    args = ["evolve", "--data", "mode", "--lam", "0.01", "--T", "2", "--out", str(out)] + SMALL
    assert main(args) == EXIT_OK
    rec = TrajectoryRecord.read(out)
    assert rec.meta["data"] == "mode" and rec.samples[0].t == 0.0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nlkg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "classify" in r.stdout

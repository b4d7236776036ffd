import json
import subprocess
import sys

import pytest

from qtrack.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

CONFIG = """
[model]
dim = 20
kbt = 0.5
[filter]
particles = 50
[run]
cycles = 0.2
transient_cycles = 0.1
snapshot_every = 100
[grid]
n_x = 41
n_p = 41
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text(CONFIG)
    return path


def test_pipeline(tmp_path, cfg, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == EXIT_OK
    record = out / "record.bin"
    assert record.is_file() and (out / "record.csv").is_file()
    assert main(["estimate", "--config", str(cfg), "--out", str(out / "q"), "--record", str(record)]) == EXIT_OK
    assert main(["track", "--config", str(cfg), "--out", str(out / "c"), "--record", str(out / "record.csv"),
                 "--ensembles"]) == EXIT_OK
    assert len(list((out / "c" / "ensembles").glob("*.csv"))) == 3
    rc = main(["compare", "--logs", str(out / "truth.csv"), str(out / "q" / "conditional.csv"),
               "--transient", "0.1", "--out", str(out / "cmp")])
    assert rc == EXIT_OK
    result = json.loads((out / "cmp" / "compare.json").read_text())
    assert set(result) == {"sigma_x", "sigma_p", "transient_cycles"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"][-1] == "manifest.json" and manifest["status"] == "ok"


def test_sweep(tmp_path, cfg, capsys):
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--parallel", "1"]) == EXIT_OK
    assert "kl=" in capsys.readouterr().out
    assert (tmp_path / "s" / "sweep.json").is_file()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\neta = 1.5\nfoo = 2\n[sweep]\ngamma =\n")
    assert main(["simulate", "--config", str(bad)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "η ∈ (0,1]" in err and "model.foo" in err and "sweep.gamma" in err


def test_missing_record_exit_2(tmp_path, cfg):
    assert main(["estimate", "--config", str(cfg), "--record", str(tmp_path / "none.bin"),
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_seed_exit_2(cfg):
    assert main(["simulate", "--config", str(cfg), "--seed", str(2**64)]) == EXIT_CONFIG


def test_compare_needs_inputs():
    assert main(["compare"]) == EXIT_CONFIG


def test_numerical_failure_exit_3(tmp_path, cfg, monkeypatch):
    from qtrack import cli
    from qtrack.errors import NumericalInvariantError

    def boom(*args, **kwargs):
        raise NumericalInvariantError("synthetic")

    monkeypatch.setattr(cli, "simulate_truth", boom)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_console_entry_point(tmp_path, cfg):
    proc = subprocess.run([sys.executable, "-m", "qtrack.cli", "simulate", "--config", str(cfg),
                           "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "qtrack.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2

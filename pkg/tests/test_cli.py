import subprocess
import sys

import pytest

from longjump.harness.cli import main
from longjump.io import read_csv

FAILING = """\
[experiment]
name = hydro-exclusion
seed = 1
replicas = 2

[run]
scales = 16, 32
T = 0.01
block = 4
profile = step breaks=0,0.25,0.5 values=0.2,0.8,0.2

[params]
l1_threshold = 1e-9
"""


def test_passing_experiment_exit_zero(tmp_path, capsys):
    assert main(["thermo", "--out", str(tmp_path), "-q"]) == 0
    assert "thermo: PASS" in capsys.readouterr().out
    files = list(tmp_path.glob("*.csv"))
    assert files
    meta, _, _ = read_csv(files[0])
    assert {"config_sha256", "seed", "version", "experiment"} <= set(meta)
    assert len(meta["config_sha256"]) == 64


def test_failing_experiment_exit_one(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(FAILING)
    assert main(["hydro-exclusion", "--config", str(cfg), "--out", str(tmp_path / "o"), "-q"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_config_errors_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(FAILING.replace("seed = 1", "sede = 1"))
    assert main(["hydro-exclusion", "--config", str(cfg)]) == 2
    assert "line 3" in capsys.readouterr().err
    assert main(["thermo", "--config", str(tmp_path / "missing.cfg")]) == 2
    # config for a different experiment
    cfg.write_text(FAILING)
    assert main(["thermo", "--config", str(cfg)]) == 2


def test_usage_error_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-experiment"])
    assert exc.value.code == 2


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("LONGJUMP_OUT", str(tmp_path / "env"))
    assert main(["thermo", "-q"]) == 0
    assert list((tmp_path / "env").glob("*.csv"))


def test_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(FAILING)
    outs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        main(["hydro-exclusion", "--config", str(cfg), "--out", str(d), "-q"])
        outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
    assert outs[0] and outs[0] == outs[1]


def test_seed_override_changes_header(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(FAILING)
    main(["hydro-exclusion", "--config", str(cfg), "--out", str(tmp_path / "s"), "--seed", "77", "-q"])
    meta, _, _ = read_csv(next((tmp_path / "s").glob("*.csv")))
    assert meta["seed"] == "77"


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "longjump.harness.cli", "thermo", "--out", str(tmp_path), "-q"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "PASS" in r.stdout

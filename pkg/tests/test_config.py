from pathlib import Path

import numpy as np
import pytest

from longjump.harness.cli import BUNDLED
from longjump.harness.config import (EXPERIMENTS, ConfigError, ExperimentConfig, load_config,
                                     parse_config, serialize_config)
from longjump.io import read_csv, write_csv

BASE = """\
[experiment]
name = hydro-exclusion
seed = 3
replicas = 2

[kernel]
alpha = 1.5

[run]
scales = 16, 32
T = 0.01
profile = step breaks=0,0.25,0.5 values=0.2,0.8,0.2
"""


def test_bundled_configs_cover_all_experiments():
    names = sorted(p.stem for p in BUNDLED.glob("*.cfg"))
    assert names == sorted(EXPERIMENTS)
    for name in names:
        assert load_config(BUNDLED / f"{name}.cfg").name == name


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_serialize_round_trip(name):
    cfg = load_config(BUNDLED / f"{name}.cfg")
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_defaults_and_block_size():
    cfg = parse_config(BASE)
    assert cfg.model == "exclusion" and cfg.fold_cutoff == 64
    assert cfg.block_size(512) == 8
    assert cfg.param("l1_threshold") == 0.05


def test_unknown_key_reports_line():
    text = BASE.replace("alpha = 1.5", "alpha_ = 1.5")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == 7
    assert "alpha_" in str(exc.value) and "line 7" in str(exc.value)


@pytest.mark.parametrize("edit,needle", [
    (("[kernel]", "[kernal]"), "unknown section"),
    (("seed = 3", "seed = three"), "bad value"),
    (("seed = 3", "seed = 3\nseed = 4"), "duplicate"),
    (("T = 0.01", "T 0.01"), "expected"),
    (("name = hydro-exclusion", "name = hydro"), "unknown experiment"),
    (("scales = 16, 32", "scales = 32, 16"), "increasing"),
    (("T = 0.01", "T = -1"), "nonnegative"),
])
def test_invalid_configs(edit, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(BASE.replace(*edit))


def test_unknown_parameter_rejected():
    with pytest.raises(ConfigError, match="unknown parameter"):
        parse_config(BASE + "\n[params]\ntheta = 1.0\n")


def test_alpha_two_requires_log_correction():
    with pytest.raises(ConfigError, match="log_corrected"):
        parse_config(BASE.replace("alpha = 1.5", "alpha = 2.0"))
    cfg = parse_config(BASE.replace("alpha = 1.5", "alpha = 2.0\ntime_scale = log_corrected"))
    assert cfg.time_scale == "log_corrected"
    with pytest.raises(ConfigError):
        ExperimentConfig(name="thermo", alpha=1.5, time_scale="log_corrected")


def test_overrides_keep_validation():
    cfg = parse_config(BASE).with_overrides(seed=9, replicas=None)
    assert cfg.seed == 9 and cfg.replicas == 2
    with pytest.raises(ConfigError):
        cfg.with_overrides(replicas=0)


def test_csv_round_trip(tmp_path: Path):
    path = tmp_path / "t.csv"
    rows = [(1, np.float64(0.1), 1 / 3), (np.int64(2), 2.5, float("inf"))]
    write_csv(path, ["a", "b", "c"], rows, {"seed": 4})
    meta, cols, cells = read_csv(path)
    assert meta == {"seed": "4"} and cols == ["a", "b", "c"]
    assert cells[0] == ["1", "0.1", repr(1 / 3)]
    assert float(cells[0][2]) == 1 / 3
    assert cells[1][0] == "2" and cells[1][2] == "inf"

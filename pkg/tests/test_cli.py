import csv
import json
import math

import pytest

from mombs.cli import main
from mombs.data import load_csv

CONFIG = """\
sampler = "mombs"
epochs = 3
pivot_epoch = 1
batch_size = 2
hidden = [8]
seeds = [0]

[dataset]
kind = "longtail"
num_classes = 3
n_max = 30
imbalance_ratio = 0.2
dim = 3
n_test_per_class = 10
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(CONFIG)
    return p


def test_run_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(out), "--seed", "4"]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"metrics.csv", "config.json", "manifest.json", "plan_epoch2.csv"} <= names
    assert json.loads((out / "manifest.json").read_text())["seed"] == 4
    assert "final acc" in capsys.readouterr().out


def test_run_flag_overrides(config, tmp_path):
    out = tmp_path / "run"
    args = ["run", "--config", str(config), "--out", str(out), "--sampler", "ohem",
            "--pivot-epoch", "inf", "--epochs", "2", "--gamma", "0.1", "--disturbances", "3"]
    assert main(args) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["sampler"] == "ohem" and cfg["epochs"] == 2
    assert cfg["G"] == 3 and cfg["gamma"] == 0.1
    with open(out / "metrics.csv", newline="") as fh:
        assert {r["phase"] for r in csv.DictReader(fh)} == {"random"}


def test_compare(config, tmp_path, capsys):
    out = tmp_path / "cmp"
    args = ["compare", "--config", str(config), "--out", str(out), "--sampler", "random,mombs",
            "--seed", "0", "--num-seeds", "2"]
    assert main(args) == 0
    with open(out / "compare.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["kind"] for r in rows] == ["random", "mombs"]
    with open(out / "compare_seeds.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    assert "mombs" in capsys.readouterr().out


def test_probe(config, tmp_path):
    out = tmp_path / "probe"
    assert main(["probe", "--config", str(config), "--out", str(out)]) == 0
    with open(out / "efficacy.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) > 0 and all(math.isfinite(float(r["delta_lB"])) for r in rows)


@pytest.mark.parametrize("kind", ["longtail", "noisy"])
def test_gen_data(kind, tmp_path):
    out = tmp_path / f"{kind}.csv"
    assert main(["gen-data", "--kind", kind, "--seed", "2", "--out", str(out)]) == 0
    ds = load_csv(out)
    assert len(ds) > 0 and ds.num_classes == 10
    again = tmp_path / "again.csv"
    main(["gen-data", "--kind", kind, "--seed", "2", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("bogus = 1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(config, tmp_path):
    out = tmp_path / "div"
    p = tmp_path / "hot.toml"
    p.write_text(CONFIG.replace("epochs = 3", "epochs = 3\neta = 1e308"))
    assert main(["run", "--config", str(p), "--out", str(out)]) == 3
    assert (out / "divergence_dump.json").exists()


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["bogus"])

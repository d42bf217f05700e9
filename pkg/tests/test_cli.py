import csv
import json

import pytest
import yaml

from neumann_bmo.cli import DEFAULT_CONFIG, SCHEMA_VERSION, ConfigError, env_overrides, main, parse_config
from neumann_bmo.experiments import EXPERIMENTS

SMALL = "experiment: {exp}\nseed: 7\npoints_per_axis: 64\nn_levels: 16\n"


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _single_run(out):
    runs = list(out.iterdir())
    assert len(runs) == 1
    return runs[0]


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(EXPERIMENTS)


def test_validate_shipped_default(capsys):
    assert main(["validate", str(DEFAULT_CONFIG)]) == 0
    assert "experiment=kernel-checks" in capsys.readouterr().out


@pytest.mark.parametrize("text, fragment", [
    ("", "cfg.yaml:1: config is empty; required keys: experiment, seed"),
    ("seed: 1\nexperiment: warp-drive\n", "cfg.yaml:2: unknown experiment 'warp-drive'"),
    ("experiment: solver\nseed: 1\ncolour: red\n", "cfg.yaml:3: unknown key 'colour'"),
    ("experiment: solver\nseed: 1\nhalf_width: wide\n", "cfg.yaml:3:"),
    ("experiment: solver\nseed: 1\nseed: 2\n", "cfg.yaml:3: duplicate key 'seed'"),
    ("experiment: solver\nseed: -4\n", "cfg.yaml:2: seed"),
    ("experiment: solver\n", "missing required keys: seed"),
    ("experiment: solver\nseed: 1\npoints_per_axis: 63\n", "cfg.yaml:3:"),
    ("experiment: [solver\n", "not valid YAML"),
])
def test_invalid_configs_exit_2_with_line(tmp_path, capsys, text, fragment):
    path = _write(tmp_path, text)
    assert main(["validate", path]) == 2
    assert fragment in capsys.readouterr().err


def test_unknown_experiment_lists_valid_names():
    with pytest.raises(ConfigError) as exc:
        parse_config("experiment: nope\nseed: 1\n")
    assert all(name in str(exc.value) for name in EXPERIMENTS)


def test_run_kernel_checks_writes_artifacts(tmp_path):
    path = _write(tmp_path, SMALL.format(exp="kernel-checks"))
    out = tmp_path / "runs"
    assert main(["run", path, "--out", str(out)]) == 0
    run = _single_run(out)
    assert run.name.startswith("kernel-checks-")
    man = json.loads((run / "manifest.json").read_text())
    for key in ("schema_version", "experiment", "seed", "threads", "config_hash", "config",
                "grid", "ball_family", "kernel_variant", "divergence_path", "versions",
                "created_utc", "files"):
        assert key in man
    assert man["schema_version"] == SCHEMA_VERSION and man["seed"] == 7
    rows = list(csv.DictReader(open(run / "kernel_checks.csv")))
    assert rows and all(r["pass"] == "true" for r in rows)
    assert yaml.safe_load((run / "config.yaml").read_text())["points_per_axis"] == 64


def test_solver_with_zero_scale_needs_one_iteration(tmp_path):
    path = _write(tmp_path, SMALL.format(exp="solver") + "data_scale: 0.0\n")
    out = tmp_path / "runs"
    assert main(["run", path, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(_single_run(out) / "iterations.csv")))
    assert len(rows) == 1


def test_solver_failure_exits_3(tmp_path, capsys):
    path = _write(tmp_path, SMALL.format(exp="solver") + "data_scale: 100000.0\nmax_iterations: 20\n")
    out = tmp_path / "runs"
    assert main(["run", path, "--out", str(out)]) == 3
    assert "numerical failure" in capsys.readouterr().err
    assert (_single_run(out) / "manifest.json").exists()


def test_flag_beats_environment_beats_file(tmp_path, monkeypatch):
    path = _write(tmp_path, SMALL.format(exp="kernel-checks"))
    monkeypatch.setenv("NEUMANN_BMO_SEED", "11")
    monkeypatch.setenv("NEUMANN_BMO_OUT", str(tmp_path / "env"))
    assert main(["run", path]) == 0
    man = json.loads((_single_run(tmp_path / "env") / "manifest.json").read_text())
    assert man["seed"] == 11
    assert main(["run", path, "--seed", "13", "--out", str(tmp_path / "flag")]) == 0
    man = json.loads((_single_run(tmp_path / "flag") / "manifest.json").read_text())
    assert man["seed"] == 13


def test_bad_environment_value_is_a_config_error():
    with pytest.raises(ConfigError, match="NEUMANN_BMO_THREADS"):
        env_overrides({"NEUMANN_BMO_THREADS": "many"})


def test_thread_count_does_not_change_results(tmp_path):
    text = SMALL.format(exp="norm-report") + "corpus: bump\n"
    path = _write(tmp_path, text)
    tables = []
    for k in (1, 2):
        out = tmp_path / f"t{k}"
        assert main(["run", path, "--out", str(out), "--threads", str(k)]) == 0
        run = _single_run(out)
        tables.append({p.name: p.read_bytes() for p in run.glob("*.csv")})
    assert tables[0] == tables[1] and tables[0]

import csv
import json

import pytest

from rmm_interp import cli
from rmm_interp.basis import load_store, read_manifest


@pytest.fixture
def kinetics_store(tmp_path):
    store = tmp_path / "store"
    code = cli.main(["snapshot", "--study", "kinetics", "--param", "0.005", "--param", "1.2",
                     "--n-times", "12", "--store", str(store)])
    assert code == cli.EXIT_OK
    return store


def _read_csv(path):
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_no_command_is_usage_error():
    assert cli.main([]) == cli.EXIT_USAGE


def test_snapshot_writes_store(kinetics_store):
    basis = load_store(kinetics_store)
    assert basis.n == 2
    assert basis.m == 12
    assert basis.p == 3
    assert read_manifest(kinetics_store).metadata["study"] == "kinetics"


def test_interp_prints_summary_and_writes_files(kinetics_store, tmp_path, capsys):
    capsys.readouterr()
    out = tmp_path / "interp"
    code = cli.main(["interp", "--store", str(kinetics_store), "--param", "0.3", "--out", str(out),
                     "--time-index", "0", "--time-index", "11"])
    assert code == cli.EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["s"] == [0.3]
    assert sum(summary["coefficients"]) == pytest.approx(1.0)
    assert summary["window"] == [0, 1]

    coefficients = _read_csv(out / "coefficients.csv")
    assert [row["snapshot_id"] for row in coefficients] == ["s_0.005", "s_1.2"]
    states = _read_csv(out / "state.csv")
    assert [row["time_index"] for row in states] == ["0", "11"]
    assert list(states[0]) == ["time_index", "t", "x1", "x2", "x3"]


def test_interp_with_window_zeroes_unused_coefficients(kinetics_store, capsys):
    capsys.readouterr()
    assert cli.main(["interp", "--store", str(kinetics_store), "--param", "1.1", "--window", "1"]) == cli.EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["window"] == [1]
    assert summary["coefficients"] == [0.0, 1.0]


def test_empty_param_is_usage_error(tmp_path):
    assert cli.main(["snapshot", "--param", "", "--store", str(tmp_path / "s")]) == cli.EXIT_USAGE
    assert cli.main(["snapshot", "--store", str(tmp_path / "s")]) == cli.EXIT_USAGE
    assert cli.main(["snapshot", "--draws", "2", "--store", str(tmp_path / "s")]) == cli.EXIT_USAGE


def test_missing_store_is_usage_error(tmp_path):
    assert cli.main(["interp", "--store", str(tmp_path / "nowhere"), "--param", "0.5"]) == cli.EXIT_USAGE


def test_invalid_config_is_usage_error(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("n_crossval: 0\n", encoding="utf-8")
    assert cli.main(["kl-export", "--config", str(config), "--out", str(tmp_path / "kl")]) == cli.EXIT_USAGE


def test_integration_failure_is_numerical_error(tmp_path):
    config = tmp_path / "tight.yaml"
    config.write_text("integrator:\n  max_steps: 5\n", encoding="utf-8")
    code = cli.main(["snapshot", "--config", str(config), "--param", "0.005", "--store", str(tmp_path / "s")])
    assert code == cli.EXIT_NUMERICAL


def test_kl_export(tmp_path):
    out = tmp_path / "kl"
    assert cli.main(["kl-export", "--out", str(out), "--realizations", "2", "--seed", "1"]) == cli.EXIT_OK
    assert (out / "kl_modes.csv").exists()
    assert (out / "kl_eigenvalues.csv").exists()
    assert (out / "realizations.csv").exists()


def test_heat_store_from_draws(tmp_path, capsys):
    config = tmp_path / "heat.yaml"
    config.write_text("heat_grid:\n  nx: 4\n  ny: 5\nkl:\n  nodes: 40\n  modes: 2\n", encoding="utf-8")
    store = tmp_path / "heat"
    code = cli.main(["snapshot", "--study", "heat", "--config", str(config), "--draws", "3", "--seed", "2",
                     "--param", "0,0", "--store", str(store)])
    assert code == cli.EXIT_OK
    basis = load_store(store)
    assert basis.n == 4
    assert basis.p == 20
    assert basis.m == 1
    assert read_manifest(store).metadata["kl"]["modes"] == 2

    capsys.readouterr()
    assert cli.main(["interp", "--store", str(store), "--param", "0.1,-0.2", "--window", "2"]) == cli.EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["window"]) == 2
    assert sum(summary["coefficients"]) == pytest.approx(1.0)

    assert cli.main(["snapshot", "--study", "heat", "--config", str(config), "--param", "0,0,0",
                     "--store", str(tmp_path / "bad")]) == cli.EXIT_USAGE


def test_near_equal_parameters_keep_separate_snapshots(tmp_path):
    store = tmp_path / "store"
    code = cli.main(["snapshot", "--param", "0.1", "--param", "0.1000001", "--n-times", "6",
                     "--store", str(store)])
    assert code == cli.EXIT_OK
    manifest = read_manifest(store)
    assert [record.id for record in manifest.snapshots] == ["s_0.1", "s_0.1000001"]
    basis = load_store(store)
    assert basis.params[:, 0].tolist() == [0.1, 0.1000001]
    assert not (basis.X_hist[0] == basis.X_hist[1]).all()


def test_repeated_parameter_is_usage_error(tmp_path):
    code = cli.main(["snapshot", "--param", "0.1", "--param", "0.1", "--n-times", "6",
                     "--store", str(tmp_path / "store")])
    assert code == cli.EXIT_USAGE

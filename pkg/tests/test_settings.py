import json
import logging

import pytest

from rmm_interp.model_api import InvalidArgumentError
from rmm_interp.schemas import StudyKind, TauMode
from rmm_interp.schemas.config import StudyConfig
from rmm_interp.settings import (
    dump_study_config,
    get_settings,
    load_config_file,
    resolve_study_config,
    setup_logging,
)


def test_study_defaults_depend_on_kind():
    kinetics = StudyConfig()
    heat = StudyConfig(study="heat")
    assert kinetics.resolved_n_bases == 40
    assert kinetics.resolved_window == 0
    assert heat.resolved_n_bases == 20
    assert heat.resolved_window == 5
    assert heat.kl.modes == 11
    assert heat.newton_options().trunc_tau == 1e-10


def test_window_larger_than_basis_rejected():
    with pytest.raises(ValueError):
        StudyConfig(study="heat", n_bases=4, window=5)
    with pytest.raises(ValueError):
        StudyConfig(study="kinetics", n_bases=1)


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("n_basis: 3\n", encoding="utf-8")
    with pytest.raises(InvalidArgumentError, match="n_basis"):
        resolve_study_config(path)


def test_yaml_round_trip(tmp_path):
    config = StudyConfig(study="heat", seed=3, n_bases=8, window=4, tau_mode="absolute",
                         heat_grid={"nx": 5, "ny": 7}, kl={"nodes": 40, "modes": 2})
    path = dump_study_config(config, tmp_path / "study.yaml")
    loaded = resolve_study_config(path)
    assert loaded == config
    assert loaded.tau_mode == TauMode.ABSOLUTE
    assert loaded.heat_grid.ny == 7


def test_json_config(tmp_path):
    path = tmp_path / "study.json"
    path.write_text(json.dumps({"study": "heat", "n_crossval": 3}), encoding="utf-8")
    config = resolve_study_config(path)
    assert config.study == StudyKind.HEAT
    assert config.n_crossval == 3


def test_precedence_overrides_file_defaults(tmp_path):
    path = tmp_path / "study.yaml"
    path.write_text("seed: 5\njobs: 3\nn_params: 50\n", encoding="utf-8")
    config = resolve_study_config(path, overrides={"seed": 9, "jobs": None}, defaults={"jobs": 1, "n_times": 12})
    assert config.seed == 9
    assert config.jobs == 3
    assert config.n_params == 50
    assert config.n_times == 12


def test_bad_config_files(tmp_path):
    with pytest.raises(InvalidArgumentError):
        load_config_file(tmp_path / "missing.yaml")
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(InvalidArgumentError):
        load_config_file(path)
    empty = tmp_path / "empty.yaml"
    empty.write_text("", encoding="utf-8")
    assert load_config_file(empty) == {}


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("RMM_JOBS", "4")
    monkeypatch.setenv("RMM_LOG_LEVEL", "debug")
    settings = get_settings()
    assert settings.jobs == 4
    assert settings.log_level == "debug"

    monkeypatch.setenv("RMM_JOBS", "0")
    with pytest.raises(InvalidArgumentError, match="jobs"):
        get_settings()


def test_setup_logging_from_yaml(tmp_path, monkeypatch):
    config = tmp_path / "logging.yaml"
    config.write_text(
        "version: 1\n"
        "disable_existing_loggers: false\n"
        "handlers:\n"
        "  console:\n"
        "    class: logging.StreamHandler\n"
        "loggers:\n"
        "  rmm_interp:\n"
        "    level: INFO\n"
        "root:\n"
        "  handlers: [console]\n",
        encoding="utf-8",
    )
    monkeypatch.delenv("RMM_LOG_CONFIG", raising=False)
    setup_logging("warning", str(config))
    assert logging.getLogger("rmm_interp").level == logging.WARNING
    assert logging.getLogger().level == logging.WARNING

import csv
import json
import math

import numpy as np
import pytest

from rmm_interp.kinetics import S_MAX, S_MIN
from rmm_interp.schemas.config import StudyConfig
from rmm_interp.schemas.results import CrossValRow
from rmm_interp.studies.heat_study import HeatStudy, param_hash, summarize
from rmm_interp.studies.kinetics_study import KineticsStudy


def _read_csv(path):
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _kinetics_config(**kwargs):
    base = dict(study="kinetics", n_params=8, n_times=10, n_bases=4, quad_nodes=10, report_at=[2, 4])
    base.update(kwargs)
    return StudyConfig(**base)


def _heat_config(**kwargs):
    base = dict(study="heat", n_bases=4, window=2, n_crossval=3, heat_grid={"nx": 4, "ny": 5},
                kl={"nodes": 40, "modes": 2})
    base.update(kwargs)
    return StudyConfig(**base)


def test_greedy_kinetics_study(tmp_path):
    study = KineticsStudy(_kinetics_config())
    rows = study.run(tmp_path)
    assert [r.n_bases for r in rows] == [2, 3, 4]
    assert all(r.s_added for r in rows[:-1])
    assert rows[-1].s_added is None
    for row in rows:
        assert row.bound <= row.best_linear + 1e-12
        assert row.E >= 0 and row.R >= 0

    for name in ("convergence.csv", "perpoint_n2.csv", "perpoint_n4.csv", "trajectories.csv", "manifest.json"):
        assert (tmp_path / name).exists(), name
    assert not (tmp_path / "perpoint_n3.csv").exists()
    assert len(_read_csv(tmp_path / "perpoint_n2.csv")) == 8
    assert len(_read_csv(tmp_path / "trajectories.csv")) == 20

    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["study"] == "kinetics"
    assert manifest["n_bases_final"] == 4
    params = manifest["basis_params"]
    assert params[:2] == [S_MIN, S_MAX]
    assert len(set(params)) == 4
    assert manifest["config"]["n_params"] == 8


def test_random_strategy_is_seeded(tmp_path):
    first = KineticsStudy(_kinetics_config(strategy="random", seed=4, n_bases=3)).run(tmp_path / "a")
    second = KineticsStudy(_kinetics_config(strategy="random", seed=4, n_bases=3)).run(tmp_path / "b")
    assert first[0].s_added == second[0].s_added
    assert first[-1].E == pytest.approx(second[-1].E)


def test_truth_is_cached():
    study = KineticsStudy(_kinetics_config())
    first = study.truth([0.5])
    assert study.truth(np.array([0.5])) is first
    evaluations = study.full_counter.count
    study.snapshot([0.5])
    # 快照只额外计入 m 次右端调用
    assert study.full_counter.count == evaluations + study.grid.m


def test_heat_study(tmp_path):
    config = _heat_config(repeats=2, refinement=True, seed=5)
    rows = HeatStudy(config).run(tmp_path)
    assert len(rows) == 6
    assert [r.repeat for r in rows] == [0, 0, 0, 1, 1, 1]
    for row in rows:
        assert 0.0 <= row.Q_true <= 1.0
        if math.isfinite(row.Q_full):
            assert row.err_full == pytest.approx(abs(row.Q_full - row.Q_true))

    assert len(_read_csv(tmp_path / "crossval.csv")) == 6
    refinement = _read_csv(tmp_path / "heat_refinement.csv")
    assert [row["nx"] for row in refinement] == ["4", "8"]
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seeds"] == [5, 6]
    assert manifest["kl"]["d"] == 2
    assert set(manifest["files"]) == {"crossval.csv", "heat_refinement.csv"}


def test_heat_draws_split_basis_and_crossval():
    study = HeatStudy(_heat_config())
    basis, crossval = study.draws(0)
    assert basis.shape == (4, 2)
    assert crossval.shape == (3, 2)
    again, _ = study.draws(0)
    np.testing.assert_array_equal(basis, again)
    other, _ = study.draws(1)
    assert not np.array_equal(basis, other)


def test_full_window_reuses_full_result():
    study = HeatStudy(_heat_config(window=0))
    basis_params, crossval = study.draws(0)
    basis = study.build_basis(basis_params)
    row = study.crossval_row(basis, crossval[0])
    assert row.s_hash == param_hash(crossval[0])
    assert row.Q_windowed == row.Q_full or (math.isnan(row.Q_full) and math.isnan(row.Q_windowed))
    assert row.fevals_win == row.fevals_full


def test_summarize_skips_failed_rows():
    ok = CrossValRow(s_hash="a", Q_true=0.5, Q_full=0.4, Q_windowed=0.45, err_full=0.1, err_win=0.05,
                     fevals_full=10, fevals_win=4, converged_full=True, converged_win=True)
    failed = ok.model_copy(update={"Q_full": float("nan"), "err_full": float("nan")})
    summary = summarize([ok, failed])
    assert summary["n_failed"] == 1
    assert summary["mean_err_full"] == pytest.approx(0.1)
    assert summary["mean_err_win"] == pytest.approx(0.05)
    assert summary["mean_fevals_win"] == pytest.approx(4.0)


def test_param_hash_is_stable():
    assert param_hash([0.0, 1.0]) == param_hash(np.array([0.0, 1.0]))
    assert param_hash([0.0, 1.0]) != param_hash([1.0, 0.0])
    assert len(param_hash([1.0])) == 12

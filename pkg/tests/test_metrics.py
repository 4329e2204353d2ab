import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from eqf.charts import FilterVariant
from eqf.errors import MisalignedError, SingularCovarianceError
from eqf.liegroups import so3_exp
from experiments.metrics import (
    RunRecord,
    compare_ensembles,
    compare_summaries,
    nees,
    nees_bounds,
    nees_value,
    rmse,
    summarize,
    write_json,
    write_nees_csv,
    write_run_csv,
    yaw_errors,
)

K = 6


def _record(rng: np.random.Generator, run_index: int = 0, variant: FilterVariant = FilterVariant.T_EQF) -> RunRecord:
    t = 0.1 * np.arange(K)
    eye = np.repeat(np.eye(3)[None], K, axis=0)
    truth_p = rng.standard_normal((K, 3))
    return RunRecord(
        variant=variant,
        strategy="tc",
        run_index=run_index,
        seed=0,
        t=t,
        truth_t=t.copy(),
        est_R=np.array([so3_exp(np.radians([0.0, 0.0, 1.0]))] * K),
        est_v=np.zeros((K, 3)),
        est_p=truth_p + np.array([0.3, 0.4, 0.0]),
        est_bias=np.zeros((K, 6)),
        truth_R=eye,
        truth_v=np.zeros((K, 3)),
        truth_p=truth_p,
        truth_bias=np.zeros((K, 6)),
        eps=rng.standard_normal((K, 15)),
        P_core=np.repeat(np.eye(15)[None], K, axis=0),
        full_nees=np.zeros(K),
        landmarks=np.full(K, 4),
        timings={"propagate": 0.6, "correct": 0.3},
    )


def test_nees_value() -> None:
    assert nees_value(np.array([2.0, 0.0, 0.0]), np.diag([4.0, 1.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(SingularCovarianceError):
        nees_value(np.ones(2), np.zeros((2, 2)))


def test_block_nees_uses_block_of_covariance(rng) -> None:
    record = _record(rng)
    np.testing.assert_allclose(nees(record, "position"), np.sum(record.eps[:, 6:9] ** 2, axis=1))
    np.testing.assert_allclose(nees(record, "orientation"), np.sum(record.eps[:, 0:3] ** 2, axis=1))
    with pytest.raises(ValueError):
        nees(record, "velocity")


def test_nees_bounds() -> None:
    lo, hi = nees_bounds(3, 100)
    assert lo == pytest.approx(2.54, abs=0.02)
    assert hi == pytest.approx(3.50, abs=0.02)
    lo1, hi1 = nees_bounds(3, 1)
    assert lo1 < lo < 3.0 < hi < hi1


def test_rmse(rng) -> None:
    position, orientation = rmse([_record(rng), _record(rng, 1)])
    assert position == pytest.approx(0.5)
    assert orientation == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rmse([])


def test_misaligned_timestamps_raise(rng) -> None:
    record = _record(rng)
    record.truth_t = record.truth_t + 0.05
    with pytest.raises(MisalignedError):
        rmse([record])


def test_yaw_errors_rotate_body_frame_error(rng) -> None:
    record = _record(rng, variant=FilterVariant.ESKF)
    c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
    record.est_R = np.repeat(np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])[None], K, axis=0)
    record.eps = np.zeros((K, 15))
    record.eps[:, 1] = 0.1
    record.P_core[:, 1, 1] = 4.0
    errors, sigmas = yaw_errors(record)
    np.testing.assert_allclose(errors, 0.1, atol=1e-12)
    np.testing.assert_allclose(sigmas, 2.0, atol=1e-12)

    world = replace(record, variant=FilterVariant.T_EQF)
    errors, sigmas = yaw_errors(world)
    np.testing.assert_allclose(errors, 0.0)
    np.testing.assert_allclose(sigmas, 1.0)


def test_summarize_and_writers(rng, tmp_path) -> None:
    records = [_record(rng, i) for i in range(3)]
    summary = summarize(records)
    assert summary.runs == 3
    assert summary.nees_orientation.shape == (K,)
    assert summary.bounds == nees_bounds(3, 3)
    assert summary.timing_ms["propagate"] == pytest.approx(100.0)
    assert len(summary.run_rmse) == 3

    payload = summary.to_dict(config_hash="cafe", seed=5)
    write_json(payload, str(tmp_path / "summary.json"))
    with open(tmp_path / "summary.json", encoding="utf-8") as handle:
        loaded = json.load(handle)
    assert loaded["config_hash"] == "cafe"
    assert loaded["variant"] == "T_EQF"
    assert loaded["rmse_position_m"] == pytest.approx(0.5)

    write_nees_csv(summary, str(tmp_path / "nees.csv"), "cafe", 5)
    with open(tmp_path / "nees.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["# config_hash=cafe", "seed=5"]
    assert rows[1] == ["t", "nees_orientation", "nees_position", "lo95", "hi95"]
    assert len(rows) == K + 2

    write_run_csv(records[0], str(tmp_path / "run.csv"), "cafe")
    with open(tmp_path / "run.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert len(rows[1]) == 1 + 15 + 9 + 15
    assert rows[1][-1] == "sigma_baz"
    assert float(rows[2][-1]) == pytest.approx(1.0)


def test_summarize_rejects_different_frame_grids(rng) -> None:
    short = _record(rng, 1)
    for name in ("t", "truth_t", "eps", "P_core"):
        setattr(short, name, getattr(short, name)[:-1])
    with pytest.raises(MisalignedError):
        summarize([_record(rng), short])
    with pytest.raises(ValueError):
        summarize([])


def test_compare_summaries_on_shared_runs(rng) -> None:
    reference = [_record(rng, i) for i in range(4)]
    inflated = [replace(r, variant=FilterVariant.SD_EQF, eps=2.0 * r.eps) for r in reference]
    shifted = [replace(r, variant=FilterVariant.ESKF, est_p=r.est_p + np.array([0.0, 0.0, 0.2])) for r in reference]
    summaries = [summarize(reference), summarize(inflated), summarize(shifted)]

    comparisons = {c.other: c for c in compare_ensembles(summaries)}
    assert set(comparisons) == {FilterVariant.SD_EQF, FilterVariant.ESKF}
    sd = comparisons[FilterVariant.SD_EQF]
    assert sd.reference is FilterVariant.T_EQF and sd.runs == 4
    assert sd.nees_orientation_final_ratio == pytest.approx(4.0)
    assert sd.yaw_exceedance_reference == summaries[0].yaw_exceedance
    assert sd.yaw_exceedance_other == summaries[1].yaw_exceedance
    assert comparisons[FilterVariant.ESKF].rmse_win_fraction == 1.0
    assert compare_summaries(summaries[2], summaries[0]).rmse_win_fraction == 0.0
    assert sd.to_dict()["other"] == "SD_EQF"

    assert compare_ensembles(summaries[1:]) == []
    with pytest.raises(MisalignedError):
        compare_summaries(summaries[0], summarize(inflated[:3]))

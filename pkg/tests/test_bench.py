import csv

import numpy as np
import pytest

from eqf.charts import FilterVariant
from eqf.filters import Strategy
from eqf.vins_model import CameraModel
from experiments.bench import BENCH_COLUMNS, bench, bench_scenario, flop_slope, loglog_slope, write_bench_csv


def test_loglog_slope() -> None:
    ms = [10, 20, 40, 80]
    assert loglog_slope(ms, [m ** 2 for m in ms]) == pytest.approx(2.0)
    assert loglog_slope(ms, [3.0 * m ** 3 for m in ms]) == pytest.approx(3.0)


def test_bench_scenario_sees_every_landmark() -> None:
    camera = CameraModel()
    state, samples, observe = bench_scenario(12, 5)
    assert len(samples) == 5
    frame = observe(state, 0.1)
    assert frame.ids == state.ids
    assert all(camera.in_bounds(uv) for uv in frame.pixels)


@pytest.fixture(scope="module")
def rows():
    return bench(
        [FilterVariant.T_EQF], [Strategy.NAIVE, Strategy.TP, Strategy.TC], m_grid=[8, 16], q_grid=[3],
        frames=1, warmup=0, baseline=True, progress=False,
    )


def test_bench_rows(rows) -> None:
    combos = {(r.variant, r.strategy) for r in rows}
    assert combos == {("T_EQF", "naive"), ("T_EQF", "tp"), ("T_EQF", "tc"), ("SD_EQF", "naive")}
    assert len(rows) == 4 * 2 * 2
    assert all(r.slope is not None and np.isfinite(r.slope) for r in rows)
    assert all(r.flops_per_frame > 0 for r in rows)


def test_tc_propagation_scales_better_than_naive(rows) -> None:
    naive = flop_slope(rows, "T_EQF", "naive", "propagate", q=3)
    tc = flop_slope(rows, "T_EQF", "tc", "propagate", q=3)
    assert tc < naive


def test_tp_propagation_scales_better_than_naive(rows) -> None:
    naive = flop_slope(rows, "T_EQF", "naive", "propagate", q=3)
    assert flop_slope(rows, "T_EQF", "tp", "propagate", q=3) < naive


def test_tc_propagation_costs_no_more_than_auxiliary_baseline(rows) -> None:
    def cost(variant: str, strategy: str) -> dict:
        return {
            r.m: r.flops_per_frame for r in rows
            if (r.variant, r.strategy, r.phase) == (variant, strategy, "propagate")
        }

    tc, baseline = cost("T_EQF", "tc"), cost("SD_EQF", "naive")
    assert set(tc) == set(baseline) == {8, 16}
    for m in tc:
        assert tc[m] <= 1.2 * baseline[m]


def test_write_bench_csv(rows, tmp_path) -> None:
    rows[0].slope = None
    path = tmp_path / "bench.csv"
    write_bench_csv(rows, str(path), config_hash="beef", seed=3)
    with open(path, newline="", encoding="utf-8") as handle:
        table = list(csv.reader(handle))
    assert table[0] == ["# config_hash=beef", "seed=3"]
    assert table[1] == BENCH_COLUMNS
    assert table[2][-1] == ""
    assert len(table) == len(rows) + 2

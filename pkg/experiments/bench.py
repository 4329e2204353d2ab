"""Замеры времени и FLOP на кадр для сеток по числу ориентиров m, частоте ИНС q и числу коррекций p."""

import csv
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from eqf.blocks import flops
from eqf.charts import FilterVariant
from eqf.filters import FilterInstance, FilterSettings, Strategy, split_batches
from eqf.transforms import hub_transform
from eqf.vins_model import GRAVITY, CameraModel, CameraObservation, ImuSample, NoiseSpec, VinsState, measure
from experiments.simulator import R_DOWN, Purpose, make_rng
from utils.logger import setup_logger

logger = setup_logger("experiments.bench")

BENCH_ALTITUDE = 5.0


@dataclass
class BenchRow:
    variant: str
    strategy: str
    m: int
    q: int
    p: int
    phase: str
    median_ms: float
    flops_per_frame: float
    slope: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def bench_scenario(m: int, q: int, seed: int = 0, camera: Optional[CameraModel] = None):
    """
    Синтетический сценарий: камера над m ориентирами, все ориентиры видимы.

    Args:
        m: Число ориентиров.
        q: Число отсчетов ИНС на кадр.
        seed: Seed.
        camera: Модель камеры.

    Returns:
        Кортеж (оценка, отсчеты ИНС одного окна, функция наблюдений кадра).
    """
    camera = camera or CameraModel()
    rng = make_rng(seed, Purpose.LANDMARKS, m)
    half_u = 0.8 * BENCH_ALTITUDE * camera.cx / camera.fx
    half_v = 0.8 * BENCH_ALTITUDE * camera.cy / camera.fy
    landmarks = np.column_stack([
        rng.uniform(-half_u, half_u, m), -rng.uniform(-half_v, half_v, m), rng.uniform(-0.3, 0.3, m)
    ])
    state = VinsState(
        R_DOWN.copy(), np.array([0.1, 0.0, 0.0]), np.array([0.0, 0.0, BENCH_ALTITUDE]),
        np.zeros(3), np.zeros(3), landmarks, tuple(range(m)),
    )
    dt = 1.0 / (10 * q)
    accel = R_DOWN.T @ (-GRAVITY)
    samples = [ImuSample(j * dt, np.array([0.0, 0.0, 0.01]), accel) for j in range(q)]

    def observe(estimate: VinsState, t: float) -> CameraObservation:
        pixels = np.array([measure(estimate, i, camera) for i in estimate.ids])
        return CameraObservation(t, estimate.ids, pixels + rng.standard_normal(pixels.shape))

    return state, samples, observe


def _instance(variant: FilterVariant, strategy: Strategy, batches: int, state: VinsState) -> FilterInstance:
    settings = FilterSettings(variant=variant, strategy=strategy, batches=batches, count_flops=True)
    P_eskf = np.diag(np.concatenate([np.full(15, 1e-4), np.full(3 * state.m, 1e-2)]))
    P0 = hub_transform(variant, state).congruence(P_eskf)
    return FilterInstance.init(settings, state, P0, NoiseSpec(), CameraModel())


def time_frames(
    variant: FilterVariant, strategy: Strategy, m: int, q: int, batches: int, frames: int, warmup: int, seed: int = 0
) -> Dict[str, Dict[str, float]]:
    """Медианное время (мс) и FLOP на кадр по фазам propagate и correct."""
    state, samples, observe = bench_scenario(m, q, seed)
    instance = _instance(variant, strategy, batches, state)
    window = samples[-1].t + (samples[1].t - samples[0].t if len(samples) > 1 else 1e-3)
    timings: Dict[str, List[float]] = {"propagate": [], "correct": []}
    counts: Dict[str, List[float]] = {"propagate": [], "correct": []}

    for k in range(warmup + frames):
        offset = k * window
        shifted = [ImuSample(s.t + offset, s.gyro, s.accel) for s in samples]
        frame = observe(instance.state, offset + window)

        flops.reset()
        start = time.perf_counter()
        instance.propagate(shifted, offset + window)
        middle = time.perf_counter()
        for batch in split_batches(frame, batches):
            instance.correct(batch)
        end = time.perf_counter()

        if k >= warmup:
            timings["propagate"].append((middle - start) * 1e3)
            timings["correct"].append((end - middle) * 1e3)
            counts["propagate"].append(flops.counts.get("propagate", 0))
            counts["correct"].append(flops.counts.get("correct", 0))

    return {
        phase: {"median_ms": float(np.median(timings[phase])), "flops": float(np.median(counts[phase]))}
        for phase in timings
    }


def loglog_slope(ms: Sequence[float], values: Sequence[float]) -> float:
    """Наклон прямой в координатах log-log."""
    x = np.log(np.asarray(ms, dtype=float))
    y = np.log(np.maximum(np.asarray(values, dtype=float), 1e-12))
    return float(np.polyfit(x, y, 1)[0])


def bench(
    variants: Sequence[FilterVariant],
    strategies: Sequence[Strategy],
    m_grid: Sequence[int],
    q_grid: Sequence[int],
    batch_grid: Sequence[int] = (1,),
    frames: int = 3,
    warmup: int = 1,
    baseline: bool = True,
    seed: int = 0,
    progress: bool = True,
) -> List[BenchRow]:
    """
    Таблица времени обработки кадра.

    Args:
        variants: Варианты фильтра.
        strategies: Реализации.
        m_grid: Сетка числа ориентиров.
        q_grid: Сетка числа отсчетов ИНС на кадр.
        batch_grid: Сетка числа коррекций на кадр p.
        frames: Число замеряемых кадров.
        warmup: Число кадров прогрева.
        baseline: Добавить вспомогательный SD-EqF (Naive) как базовую линию.
        seed: Seed.
        progress: Показывать tqdm.

    Returns:
        Строки таблицы; для каждой серии по m заполнен наклон.
    """
    combos = [(FilterVariant(v), Strategy(s)) for v in variants for s in strategies]
    if baseline and (FilterVariant.SD_EQF, Strategy.NAIVE) not in combos:
        combos.append((FilterVariant.SD_EQF, Strategy.NAIVE))

    jobs = [(v, s, m, q, p) for v, s in combos for q in q_grid for p in batch_grid for m in m_grid]
    rows: List[BenchRow] = []
    for v, s, m, q, p in tqdm(jobs, desc="bench", disable=not progress):
        result = time_frames(v, s, m, q, p, frames, warmup, seed)
        for phase, values in result.items():
            rows.append(BenchRow(v.value, s.value, m, q, p, phase, values["median_ms"], values["flops"]))
        logger.debug(f"{v.value}/{s.value} m={m} q={q} p={p}: {result}")

    series: Dict[tuple, List[BenchRow]] = {}
    for row in rows:
        series.setdefault((row.variant, row.strategy, row.q, row.p, row.phase), []).append(row)
    for group in series.values():
        if len(group) > 1:
            slope = loglog_slope([r.m for r in group], [r.median_ms for r in group])
            for row in group:
                row.slope = slope
    return rows


def flop_slope(rows: Sequence[BenchRow], variant: str, strategy: str, phase: str, q: int, p: int = 1) -> float:
    group = [r for r in rows if (r.variant, r.strategy, r.phase, r.q, r.p) == (variant, strategy, phase, q, p)]
    return loglog_slope([r.m for r in group], [r.flops_per_frame for r in group])


BENCH_COLUMNS = ["variant", "strategy", "m", "q", "p", "phase", "median_ms", "flops_per_frame", "slope"]


def write_bench_csv(rows: Sequence[BenchRow], path: str, config_hash: str = "", seed: int = 0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"# config_hash={config_hash}", f"seed={seed}"])
        writer.writerow(BENCH_COLUMNS)
        for row in rows:
            values = row.to_dict()
            writer.writerow(["" if values[c] is None else values[c] for c in BENCH_COLUMNS])

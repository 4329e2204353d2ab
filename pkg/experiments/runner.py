"""Запуск фильтров на симуляции: одиночные прогоны и ансамбли Монте-Карло."""

import asyncio
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from eqf.blocks import flops
from eqf.charts import FilterVariant, chart_forward, chart_inverse
from eqf.filters import FilterInstance, FilterSnapshot, LandmarkPrior, Strategy, run_sequence
from eqf.observability import (
    UNOBSERVABLE_DIM,
    excitation_trajectory,
    perturb_estimates,
    stack_transfer_residual,
    state_independence_report,
    variant_report,
)
from eqf.transforms import hub_transform
from eqf.vins_model import NoiseSpec, VinsState, random_state
from experiments.metrics import RunRecord, nees_value
from experiments.simulator import Purpose, SimWorld, Simulation, build_world, make_rng, simulate
from utils.config import ExperimentConfig
from utils.logger import setup_logger

logger = setup_logger("experiments.runner")


def world_from_config(config: ExperimentConfig) -> SimWorld:
    return build_world(config.trajectory, config.world, config.noise, config.camera, config.seed)


def simulate_run(config: ExperimentConfig, run_index: int = 0) -> Simulation:
    return simulate(world_from_config(config), config.trajectory, run_index)


def initial_estimate(config: ExperimentConfig, sim: Simulation) -> VinsState:
    """
    Начальная оценка: истина, смещенная на выборку из априорного распределения ESKF.

    Args:
        config: Конфигурация.
        sim: Симуляция прогона.

    Returns:
        Начальная оценка без ориентиров.
    """
    truth = sim.truth[0]
    estimate = truth
    if config.filter.perturb_initial:
        rng = make_rng(config.seed, Purpose.INITIAL_ESTIMATE, sim.run_index)
        error = config.filter.prior_sigmas() * rng.standard_normal(15)
        estimate = chart_inverse(FilterVariant.ESKF, truth, -error)
    if config.filter.zero_initial_bias:
        estimate = replace(estimate, bw=np.zeros(3), ba=np.zeros(3))
    return estimate


def landmark_initializer(sim: Simulation, sigma: float, seed: int) -> Callable[[int, VinsState], LandmarkPrior]:
    """Начальные оценки ориентиров: истина плюс N(0, sigma^2), независимо от текущей оценки."""
    rng = make_rng(seed, Purpose.LANDMARK_PRIOR, sim.run_index)
    offsets = sigma * rng.standard_normal(sim.world.landmarks.shape)

    def initializer(landmark_id: int, state: VinsState) -> LandmarkPrior:
        return LandmarkPrior(sim.world.landmarks[landmark_id] + offsets[landmark_id], sigma)

    return initializer


def create_filter(
    config: ExperimentConfig,
    variant: FilterVariant,
    strategy: Strategy,
    estimate: VinsState,
    noise: Optional[NoiseSpec] = None,
) -> FilterInstance:
    P0 = hub_transform(variant, estimate).congruence(config.filter.prior_covariance())
    settings = config.filter.settings(variant, strategy)
    return FilterInstance.init(settings, estimate, P0, noise or config.noise, config.camera, t=0.0)


def record_from_snapshots(
    sim: Simulation,
    snapshots: List[FilterSnapshot],
    variant: FilterVariant,
    strategy: Strategy,
    seed: int,
    timings: Optional[dict] = None,
    flop_counts: Optional[dict] = None,
) -> RunRecord:
    """Сводит апостериорные оценки прогона в RunRecord с ошибками в координатах варианта."""
    rate = sim.world.imu_rate
    K = len(snapshots)
    eps = np.zeros((K, 15))
    P_core = np.zeros((K, 15, 15))
    full_nees = np.zeros(K)
    truths = []
    for k, (snap, index) in enumerate(zip(snapshots, sim.frame_indices)):
        truth = sim.truth_with_landmarks(index, snap.state.ids)
        error = chart_forward(variant, snap.state, truth)
        eps[k] = error[:15]
        P_core[k] = snap.covariance[:15, :15]
        full_nees[k] = nees_value(error, snap.covariance)
        truths.append(truth)

    states = [s.state for s in snapshots]
    return RunRecord(
        variant=FilterVariant(variant),
        strategy=Strategy(strategy).value,
        run_index=sim.run_index,
        seed=seed,
        t=np.array([s.t for s in snapshots]),
        truth_t=np.array([index / rate for index in sim.frame_indices[:K]]),
        est_R=np.array([s.R for s in states]),
        est_v=np.array([s.v for s in states]),
        est_p=np.array([s.p for s in states]),
        est_bias=np.array([s.bias for s in states]),
        truth_R=np.array([s.R for s in truths]),
        truth_v=np.array([s.v for s in truths]),
        truth_p=np.array([s.p for s in truths]),
        truth_bias=np.array([s.bias for s in truths]),
        eps=eps,
        P_core=P_core,
        full_nees=full_nees,
        landmarks=np.array([s.m for s in states]),
        timings=dict(timings or {}),
        flops=dict(flop_counts or {}),
    )


def run_filter(
    config: ExperimentConfig,
    variant: FilterVariant,
    strategy: Strategy,
    sim: Optional[Simulation] = None,
    run_index: int = 0,
    progress: bool = False,
) -> RunRecord:
    """
    Один прогон фильтра на симуляции.

    Args:
        config: Конфигурация.
        variant: Вариант фильтра.
        strategy: Реализация ковариации.
        sim: Готовая симуляция (иначе строится по config и run_index).
        run_index: Номер прогона.
        progress: Показывать прогресс по кадрам.

    Returns:
        RunRecord.
    """
    sim = sim if sim is not None else simulate_run(config, run_index)
    variant, strategy = FilterVariant(variant), Strategy(strategy)
    instance = create_filter(config, variant, strategy, initial_estimate(config, sim))
    initializer = landmark_initializer(sim, config.filter.landmark_sigma, config.seed)

    flops.reset()
    bar = tqdm(total=len(sim.frames), desc=f"{variant.value}/{strategy.value}", disable=not progress, leave=False)
    with bar:
        snapshots = run_sequence(instance, sim.imu, sim.frames, initializer, progress=lambda _: bar.update(1))
    counts = dict(flops.counts) if config.filter.count_flops else {}

    record = record_from_snapshots(sim, snapshots, variant, strategy, config.seed, instance.timings, counts)
    logger.debug(
        f"Прогон {sim.run_index} {variant.value}/{strategy.value}: ориентиров {instance.state.m}, "
        f"время распространения {instance.timings['propagate']:.2f} с, коррекции {instance.timings['correct']:.2f} с"
    )
    return record


def _run_job(config_json: str, variant: str, strategy: str, run_index: int) -> RunRecord:
    config = ExperimentConfig.model_validate_json(config_json)
    return run_filter(config, FilterVariant(variant), Strategy(strategy), run_index=run_index)


async def run_monte_carlo(
    config: ExperimentConfig,
    variant: FilterVariant,
    strategy: Strategy,
    runs: Optional[int] = None,
    workers: Optional[int] = None,
    progress: bool = True,
) -> List[RunRecord]:
    """
    Ансамбль прогонов; результаты упорядочены по номеру прогона.

    Args:
        config: Конфигурация.
        variant: Вариант фильтра.
        strategy: Реализация ковариации.
        runs: Число прогонов (по умолчанию monte_carlo.runs).
        workers: Размер пула процессов (по умолчанию config.workers).
        progress: Показывать tqdm.

    Returns:
        Список RunRecord.
    """
    runs = runs or config.monte_carlo.runs
    workers = workers or config.workers
    variant, strategy = FilterVariant(variant), Strategy(strategy)
    payload = config.model_dump_json()
    desc = f"МК {variant.value}/{strategy.value}"
    records: List[RunRecord] = []

    if workers <= 1:
        for i in tqdm(range(runs), desc=desc, disable=not progress):
            records.append(_run_job(payload, variant.value, strategy.value, i))
        return records

    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            loop.run_in_executor(pool, _run_job, payload, variant.value, strategy.value, i) for i in range(runs)
        ]
        for future in tqdm(asyncio.as_completed(futures), total=runs, desc=desc, disable=not progress):
            records.append(await future)
    return sorted(records, key=lambda r: r.run_index)


def observability_summary(config: ExperimentConfig) -> Dict[str, Any]:
    """
    Отчет наблюдаемости: ранги стеков в идеальных и возмущенных оценках, невязки переноса и зависимость базисов.

    Args:
        config: Конфигурация (секция observability).

    Returns:
        Словарь для observability.json.
    """
    section = config.observability
    states, samples, t_end = excitation_trajectory(
        section.landmarks, section.duration, section.imu_rate, seed=config.seed
    )
    frames = list(range(0, len(states), section.frame_every))
    rng = np.random.default_rng(config.seed)
    perturbed = perturb_estimates(states, rng, section.perturbation_sigma, 0.5 * section.perturbation_sigma)
    pair = (random_state(rng, section.landmarks), random_state(rng, section.landmarks))

    variants: Dict[str, Any] = {}
    for variant in FilterVariant:
        ideal = variant_report(variant, states, samples, t_end, frames, config.camera, section.tolerance)
        noisy = variant_report(variant, perturbed, samples, t_end, frames, config.camera, section.tolerance)
        independence = state_independence_report(variant, *pair)
        entry = ideal.to_dict()
        entry.update(
            perturbed_rank=noisy.rank,
            perturbed_nullspace_dim=noisy.nullspace_dim,
            perturbed_basis_residual=noisy.basis_residual,
            independence_angle=independence.angle,
            bitwise_state_independent=independence.bitwise_equal,
        )
        if variant is not FilterVariant.ESKF:
            entry["transfer_residual_from_eskf"] = stack_transfer_residual(
                FilterVariant.ESKF, variant, states, samples, t_end, frames, config.camera
            )
        variants[variant.value] = entry
        logger.info(
            f"{variant.value}: ядро {ideal.nullspace_dim} (идеально), {noisy.nullspace_dim} (возмущенно), "
            f"невязка базиса {ideal.basis_residual:.2e}"
        )

    return {
        "frames": len(frames),
        "landmarks": section.landmarks,
        "unobservable_dim": UNOBSERVABLE_DIM,
        "variants": variants,
    }

"""Метрики точности и согласованности: RMSE, NEES, выходы за 3 сигма и сводка по ансамблю."""

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.stats import chi2

from eqf.charts import POS, THETA, FilterVariant
from eqf.errors import MisalignedError, SingularCovarianceError
from eqf.liegroups import so3_log
from utils.logger import setup_logger

logger = setup_logger("experiments.metrics")

NEES_BLOCKS = {"orientation": THETA, "position": POS}
BODY_FRAME_ROTATION = (FilterVariant.ESKF, FilterVariant.LI_EKF)
NAV_NAMES = ["theta", "v", "p", "bw", "ba"]


@dataclass
class RunRecord:
    """
    Результаты одного прогона фильтра на моментах кадров.

    Args:
        variant: Вариант фильтра.
        strategy: Реализация ковариации.
        run_index: Номер прогона Монте-Карло.
        seed: Seed эксперимента.
        t: Время оценок (K,).
        truth_t: Время истинных состояний (K,).
        est_R, est_v, est_p, est_bias: Оценка.
        truth_R, truth_v, truth_p, truth_bias: Истина.
        eps: Ошибка ядра (K, 15) в координатах варианта.
        P_core: Блок ковариации ядра (K, 15, 15) в координатах варианта.
        full_nees: NEES полного состояния (K,).
        landmarks: Число ориентиров в состоянии (K,).
    """

    variant: FilterVariant
    strategy: str
    run_index: int
    seed: int
    t: np.ndarray
    truth_t: np.ndarray
    est_R: np.ndarray
    est_v: np.ndarray
    est_p: np.ndarray
    est_bias: np.ndarray
    truth_R: np.ndarray
    truth_v: np.ndarray
    truth_p: np.ndarray
    truth_bias: np.ndarray
    eps: np.ndarray
    P_core: np.ndarray
    full_nees: np.ndarray
    landmarks: np.ndarray
    timings: Dict[str, float] = field(default_factory=dict)
    flops: Dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def check_aligned(self) -> None:
        if len(self.t) != len(self.truth_t) or not np.allclose(self.t, self.truth_t, rtol=0.0, atol=1e-9):
            raise MisalignedError(f"Метки времени оценки и истины не совпадают (прогон {self.run_index})")

    def position_errors(self) -> np.ndarray:
        return np.linalg.norm(self.est_p - self.truth_p, axis=1)

    def orientation_errors_deg(self) -> np.ndarray:
        """||Log(R_est^T R_true)|| в градусах."""
        angles = [np.linalg.norm(so3_log(Re.T @ Rt)) for Re, Rt in zip(self.est_R, self.truth_R)]
        return np.degrees(np.array(angles))


def rmse(records: Sequence[RunRecord]) -> Tuple[float, float]:
    """
    RMSE положения (м) и ориентации (град) по всем кадрам и прогонам.

    Args:
        records: Записи прогонов.

    Returns:
        Кортеж (RMSE положения, RMSE ориентации).
    """
    if not records:
        raise ValueError("Нет записей для RMSE")
    pos, ori = [], []
    for record in records:
        record.check_aligned()
        pos.append(record.position_errors())
        ori.append(record.orientation_errors_deg())
    pos_all, ori_all = np.concatenate(pos), np.concatenate(ori)
    return float(np.sqrt(np.mean(pos_all ** 2))), float(np.sqrt(np.mean(ori_all ** 2)))


def nees_value(eps: np.ndarray, P: np.ndarray) -> float:
    """eps^T P^-1 eps через разложение Холецкого."""
    try:
        factor = scipy.linalg.cho_factor(P)
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError(f"Ковариация не положительно определена: {e}") from e
    return float(eps @ scipy.linalg.cho_solve(factor, eps))


def nees(record: RunRecord, block: str) -> np.ndarray:
    """
    NEES блока по кадрам в собственных координатах ошибки варианта.

    Args:
        record: Запись прогона.
        block: "orientation" или "position".

    Returns:
        Массив (K,).
    """
    if block not in NEES_BLOCKS:
        raise ValueError(f"Неизвестный блок NEES: {block}")
    s = NEES_BLOCKS[block]
    return np.array([nees_value(e[s], P[s, s]) for e, P in zip(record.eps, record.P_core)])


def yaw_errors(record: RunRecord) -> Tuple[np.ndarray, np.ndarray]:
    """Ошибка рыскания в мировой системе и ее СКО по кадрам."""
    theta = record.eps[:, THETA]
    P_theta = record.P_core[:, THETA, THETA]
    if record.variant in BODY_FRAME_ROTATION:
        errors = np.einsum("kij,kj->ki", record.est_R, theta)[:, 2]
        variances = np.einsum("ki,kij,kj->k", record.est_R[:, 2, :], P_theta, record.est_R[:, 2, :])
    else:
        errors = theta[:, 2]
        variances = P_theta[:, 2, 2]
    return errors, np.sqrt(np.maximum(variances, 0.0))


def yaw_exceedance(records: Sequence[RunRecord]) -> float:
    """Доля кадров, где |ошибка рыскания| > 3 сигма."""
    flags = []
    for record in records:
        errors, sigmas = yaw_errors(record)
        flags.append(np.abs(errors) > 3.0 * sigmas)
    return float(np.mean(np.concatenate(flags))) if flags else 0.0


def nees_bounds(dof: int, runs: int, alpha: float = 0.05) -> Tuple[float, float]:
    """Двусторонние границы среднего NEES по runs прогонам."""
    lo = chi2.ppf(alpha / 2.0, dof * runs) / runs
    hi = chi2.ppf(1.0 - alpha / 2.0, dof * runs) / runs
    return float(lo), float(hi)


@dataclass
class EnsembleSummary:
    """Сводка ансамбля Монте-Карло для одного варианта и реализации."""

    variant: FilterVariant
    strategy: str
    runs: int
    t: np.ndarray
    nees_orientation: np.ndarray
    nees_position: np.ndarray
    bounds: Tuple[float, float]
    rmse_position: float
    rmse_orientation: float
    run_rmse: List[Tuple[float, float]]
    yaw_exceedance: float
    timing_ms: Dict[str, float]

    def final_third(self, series: np.ndarray) -> np.ndarray:
        return series[2 * len(series) // 3:]

    def to_dict(self, config_hash: str = "", seed: Optional[int] = None) -> Dict[str, Any]:
        return {
            "config_hash": config_hash,
            "seed": seed,
            "variant": self.variant.value,
            "strategy": self.strategy,
            "runs": self.runs,
            "rmse_position_m": self.rmse_position,
            "rmse_orientation_deg": self.rmse_orientation,
            "run_rmse": [list(x) for x in self.run_rmse],
            "nees_orientation_final_third_mean": float(np.mean(self.final_third(self.nees_orientation))),
            "nees_position_final_third_mean": float(np.mean(self.final_third(self.nees_position))),
            "nees_orientation_final": float(self.nees_orientation[-1]),
            "nees_bounds_95": list(self.bounds),
            "yaw_exceedance_3sigma": self.yaw_exceedance,
            "timing_ms_per_frame": self.timing_ms,
        }


def summarize(records: Sequence[RunRecord], alpha: float = 0.05) -> EnsembleSummary:
    """
    Сводит ансамбль прогонов одного фильтра.

    Args:
        records: Прогоны с одинаковой сеткой кадров.
        alpha: Уровень значимости границ NEES.

    Returns:
        EnsembleSummary.
    """
    if not records:
        raise ValueError("Пустой ансамбль")
    first = records[0]
    for record in records:
        record.check_aligned()
        if len(record) != len(first) or not np.allclose(record.t, first.t, rtol=0.0, atol=1e-9):
            raise MisalignedError(f"Прогон {record.run_index} имеет другую сетку кадров")

    nees_ori = np.mean([nees(r, "orientation") for r in records], axis=0)
    nees_pos = np.mean([nees(r, "position") for r in records], axis=0)
    pos, ori = rmse(records)
    frames = max(len(first), 1)
    timing = {
        phase: float(np.median([r.timings.get(phase, 0.0) for r in records]) * 1e3 / frames)
        for phase in ("propagate", "correct")
    }
    summary = EnsembleSummary(
        variant=first.variant,
        strategy=first.strategy,
        runs=len(records),
        t=first.t.copy(),
        nees_orientation=nees_ori,
        nees_position=nees_pos,
        bounds=nees_bounds(3, len(records), alpha),
        rmse_position=pos,
        rmse_orientation=ori,
        run_rmse=[rmse([r]) for r in records],
        yaw_exceedance=yaw_exceedance(records),
        timing_ms=timing,
    )
    logger.info(
        f"{summary.variant.value}/{summary.strategy}: RMSE {pos:.3f} м / {ori:.3f} град, "
        f"NEES ориентации в конце {nees_ori[-1]:.2f}, выходы рыскания {summary.yaw_exceedance:.1%}"
    )
    return summary


@dataclass
class VariantComparison:
    """Сравнение согласованности двух вариантов на общих прогонах (одинаковые seed и номера прогонов)."""

    reference: FilterVariant
    other: FilterVariant
    runs: int
    nees_orientation_final_ratio: float
    yaw_exceedance_reference: float
    yaw_exceedance_other: float
    rmse_win_fraction: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "reference": self.reference.value,
            "other": self.other.value,
            "runs": self.runs,
            "nees_orientation_final_ratio": self.nees_orientation_final_ratio,
            "yaw_exceedance_reference": self.yaw_exceedance_reference,
            "yaw_exceedance_other": self.yaw_exceedance_other,
            "rmse_win_fraction": self.rmse_win_fraction,
        }


def compare_summaries(reference: EnsembleSummary, other: EnsembleSummary) -> VariantComparison:
    """
    Сравнивает ансамбли двух вариантов, построенные на одних и тех же прогонах.

    Args:
        reference: Сводка опорного варианта.
        other: Сводка сравниваемого варианта.

    Returns:
        VariantComparison: отношение NEES ориентации в последний момент (other / reference),
        доли выходов рыскания за 3 сигма и доля прогонов, где RMSE положения опорного
        варианта не больше, чем у сравниваемого.
    """
    if reference.runs != other.runs or len(reference.t) != len(other.t):
        raise MisalignedError(
            f"Ансамбли {reference.variant.value} и {other.variant.value} построены на разных прогонах"
        )
    if not np.allclose(reference.t, other.t, rtol=0.0, atol=1e-9):
        raise MisalignedError("Сетки кадров ансамблей не совпадают")
    wins = [ref[0] <= oth[0] for ref, oth in zip(reference.run_rmse, other.run_rmse)]
    return VariantComparison(
        reference=reference.variant,
        other=other.variant,
        runs=reference.runs,
        nees_orientation_final_ratio=float(other.nees_orientation[-1] / reference.nees_orientation[-1]),
        yaw_exceedance_reference=reference.yaw_exceedance,
        yaw_exceedance_other=other.yaw_exceedance,
        rmse_win_fraction=float(np.mean(wins)),
    )


def compare_ensembles(
    summaries: Sequence[EnsembleSummary], reference: FilterVariant = FilterVariant.T_EQF
) -> List[VariantComparison]:
    """Сравнения опорного варианта со всеми остальными; пусто, если опорного варианта нет."""
    by_variant = {s.variant: s for s in summaries}
    if reference not in by_variant:
        return []
    comparisons = [compare_summaries(by_variant[reference], s) for v, s in by_variant.items() if v is not reference]
    for c in comparisons:
        logger.info(
            f"{c.other.value} против {c.reference.value}: "
            f"отношение NEES ориентации {c.nees_orientation_final_ratio:.2f}, "
            f"выходы рыскания {c.yaw_exceedance_other:.1%} / {c.yaw_exceedance_reference:.1%}, "
            f"RMSE не хуже в {c.rmse_win_fraction:.0%} прогонов"
        )
    return comparisons


def _comment(config_hash: str, seed: int) -> List[str]:
    return [f"# config_hash={config_hash}", f"seed={seed}"]


def write_nees_csv(summary: EnsembleSummary, path: str, config_hash: str = "", seed: int = 0) -> None:
    lo, hi = summary.bounds
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_comment(config_hash, seed))
        writer.writerow(["t", "nees_orientation", "nees_position", "lo95", "hi95"])
        for t, o, p in zip(summary.t, summary.nees_orientation, summary.nees_position):
            writer.writerow([f"{t:.6f}", f"{o:.6f}", f"{p:.6f}", f"{lo:.6f}", f"{hi:.6f}"])


def write_run_csv(record: RunRecord, path: str, config_hash: str = "") -> None:
    """CSV прогона: оценка, истина и СКО по компонентам блоков ядра."""
    sigma_cols = [f"sigma_{name}{axis}" for name in NAV_NAMES for axis in "xyz"]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_comment(config_hash, record.seed))
        writer.writerow(
            ["t"]
            + [f"est_{c}" for c in ("rx", "ry", "rz", "vx", "vy", "vz", "px", "py", "pz",
                                     "bwx", "bwy", "bwz", "bax", "bay", "baz")]
            + [f"true_{c}" for c in ("rx", "ry", "rz", "vx", "vy", "vz", "px", "py", "pz")]
            + sigma_cols
        )
        for k in range(len(record)):
            row = np.concatenate([
                so3_log(record.est_R[k]), record.est_v[k], record.est_p[k], record.est_bias[k],
                so3_log(record.truth_R[k]), record.truth_v[k], record.truth_p[k],
                np.sqrt(np.maximum(np.diag(record.P_core[k]), 0.0)),
            ])
            writer.writerow([f"{record.t[k]:.6f}"] + [f"{x:.9g}" for x in row])


def write_json(payload: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)

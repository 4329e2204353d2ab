"""Рекурсивные фильтры: циклы распространения и коррекции для всех вариантов и трех реализаций.

Naive: плотная ковариация целевого варианта;
TP: распространение во вспомогательном варианте и перенос через T;
TC: хранение эквивалентной ковариации P = T^-1 P* T^-T.
"""

import time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, field_validator

from eqf.blocks import IMU_DIM, LowerBlockMatrix, flops
from eqf.charts import FilterVariant, chart_inverse
from eqf.errors import DimensionMismatchError, NotPSDError, SingularInnovationError
from eqf.jacobians import ProcessNoiseDensity, StructuredPhiQ, accumulate, discrete_step, measurement_H
from eqf.transforms import hub_transform, transform_closed_form
from eqf.vins_model import (
    CameraModel,
    CameraObservation,
    ImuSample,
    NoiseSpec,
    VinsState,
    imu_intervals,
    measure,
    propagate_mean,
)
from utils.logger import setup_logger

logger = setup_logger("eqf.filters")

AUXILIARY_VARIANTS = (FilterVariant.SD_EQF, FilterVariant.ESKF)


class Strategy(str, Enum):
    """Реализация распространения и коррекции ковариации."""

    NAIVE = "naive"
    TP = "tp"
    TC = "tc"


class FilterSettings(BaseModel):
    """Параметры фильтра."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: FilterVariant = FilterVariant.T_EQF
    strategy: Strategy = Strategy.NAIVE
    auxiliary: FilterVariant = FilterVariant.SD_EQF
    batches: int = Field(1, ge=1)
    joseph: bool = False
    substeps: int = Field(4, ge=2)
    quadrature: Literal["simpson", "trapezoid"] = "simpson"
    symmetry_tolerance: float = Field(1e-9, gt=0.0)
    count_flops: bool = False

    @field_validator("auxiliary")
    @classmethod
    def _check_auxiliary(cls, value: FilterVariant) -> FilterVariant:
        if value not in AUXILIARY_VARIANTS:
            raise ValueError(f"Вспомогательный вариант должен быть SD_EQF или ESKF, получено {value}")
        return value


@dataclass(frozen=True)
class CorrectionBatch:
    """Часть наблюдений кадра, обрабатываемая одним обновлением."""

    ids: Tuple[int, ...]
    pixels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class LandmarkPrior:
    """
    Начальная оценка нового ориентира.

    Args:
        position: Оценка положения в мировой системе.
        sigma: СКО ошибки в координатах ESKF, м.
        eskf_coupling: Матрица 3x15 зависимости ошибки ориентира от ошибки ядра ESKF
            (None, если начальная оценка не зависит от текущей оценки позы).
    """

    position: np.ndarray
    sigma: float
    eskf_coupling: Optional[np.ndarray] = None


@dataclass(frozen=True)
class FilterSnapshot:
    """Апостериорная оценка на момент кадра."""

    t: float
    state: VinsState
    covariance: np.ndarray


LandmarkInitializer = Callable[[int, VinsState], LandmarkPrior]


def split_batches(frame: CameraObservation, batches: int) -> List[CorrectionBatch]:
    """
    Делит наблюдения кадра на batches частей по кругу.

    Args:
        frame: Кадр камеры.
        batches: Число частей p.

    Returns:
        Непустые части в порядке обработки.
    """
    result = []
    for b in range(batches):
        indices = list(range(b, len(frame.ids), batches))
        if indices:
            result.append(CorrectionBatch(tuple(frame.ids[i] for i in indices), frame.pixels[indices]))
    return result


def check_psd(P: np.ndarray, name: str = "P", rel_tol: float = 1e-10) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionMismatchError(f"{name}: ожидалась квадратная матрица, получено {P.shape}")
    scale = max(np.trace(np.abs(P)), 1.0)
    if not np.allclose(P, P.T, atol=1e-9 * scale, rtol=0.0):
        raise NotPSDError(f"{name} не симметрична")
    min_eig = np.linalg.eigvalsh(0.5 * (P + P.T)).min()
    if min_eig < -rel_tol * scale:
        raise NotPSDError(f"{name} имеет отрицательное собственное число {min_eig:.3e}")


def kalman_update(
    P: np.ndarray, H: np.ndarray, residual: np.ndarray, R_meas: np.ndarray, joseph: bool = False
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Линейное обновление Калмана.

    Args:
        P: Априорная ковариация.
        H: Якобиан измерения.
        residual: Невязка z - h(x).
        R_meas: Ковариация шума измерения.
        joseph: Использовать форму Джозефа.

    Returns:
        Кортеж (поправка K z, апостериорная P, K).
    """
    HP = flops.matmul(H, P)
    S = flops.matmul(HP, H.T) + R_meas
    try:
        factor = scipy.linalg.cho_factor(0.5 * (S + S.T))
    except np.linalg.LinAlgError as e:
        raise SingularInnovationError(f"Ковариация невязки не положительно определена: {e}") from e
    flops.add(S.shape[0], S.shape[0], P.shape[0])
    K = scipy.linalg.cho_solve(factor, HP).T
    delta = K @ residual

    if joseph:
        IKH = np.eye(P.shape[0]) - flops.matmul(K, H)
        P_new = flops.matmul(flops.matmul(IKH, P), IKH.T) + flops.matmul(flops.matmul(K, R_meas), K.T)
    else:
        P_new = P - flops.matmul(K, HP)
    return delta, 0.5 * (P_new + P_new.T), K


def _lift_core_noise(T: LowerBlockMatrix, q_core: np.ndarray) -> np.ndarray:
    """T Q T^T для Q, отличной от нуля только в ядре 15x15."""
    columns = np.vstack([T.core, T.coupling_dense()]) if T.m else T.core
    X = flops.matmul(columns, q_core)
    return flops.matmul(X, columns.T)


def _pad_core(q_core: np.ndarray, n: int) -> np.ndarray:
    Q = np.zeros((n, n))
    Q[:IMU_DIM, :IMU_DIM] = q_core
    return Q


def apply_relative_transform(relative: LowerBlockMatrix, P: np.ndarray) -> np.ndarray:
    """
    P <- T_rel P T_rel^T.

    При единичных ядре и блоках ориентиров T_rel раскладывается в произведение разреженных
    множителей, каждый из которых добавляет к строкам ориентира i его связь Delta_i с ядром.
    """
    if not (relative.core_is_identity and relative.landmark is None):
        return relative.congruence(P)
    if relative.coupling is None:
        return P.copy()
    cols = np.concatenate([np.arange(3 * j, 3 * j + 3) for j in relative.coupling_blocks])
    delta = relative.coupling[:, cols]
    X = P.copy()
    X[IMU_DIM:] += flops.matmul(delta, X[cols])
    X[:, IMU_DIM:] += flops.matmul(X[:, cols], delta.T)
    return 0.5 * (X + X.T)


class FilterInstance:
    """Оценка, ковариация, вариант и стратегия реализации одного фильтра."""

    def __init__(
        self,
        settings: FilterSettings,
        state: VinsState,
        covariance: np.ndarray,
        noise: NoiseSpec,
        camera: CameraModel,
        t: float = 0.0,
    ):
        """
        Создает фильтр с уже преобразованной (отслеживаемой) ковариацией.

        Используйте FilterInstance.init для запуска из ковариации целевого варианта.
        """
        self.settings = settings
        self.state = state
        self.P = covariance
        self.noise = noise
        self.noise_density = ProcessNoiseDensity.from_noise(noise)
        self.camera = camera
        self.t = t
        self.timings: Dict[str, float] = {"propagate": 0.0, "correct": 0.0}

    @classmethod
    def init(
        cls,
        settings: FilterSettings,
        state: VinsState,
        covariance: np.ndarray,
        noise: NoiseSpec,
        camera: CameraModel,
        t: float = 0.0,
    ) -> "FilterInstance":
        """
        Инициализирует фильтр.

        Args:
            settings: Параметры фильтра.
            state: Начальная оценка.
            covariance: Начальная ковариация в координатах целевого варианта.
            noise: Шумы.
            camera: Модель камеры.
            t: Начальное время.

        Returns:
            FilterInstance; для TC хранится P = T^-1 P0 T^-T.
        """
        covariance = np.asarray(covariance, dtype=float)
        if covariance.shape != (state.dim, state.dim):
            raise DimensionMismatchError(f"Ковариация {covariance.shape} не соответствует состоянию N={state.dim}")
        check_psd(covariance, "P0")
        instance = cls(settings, state, 0.5 * (covariance + covariance.T), noise, camera, t)
        if settings.strategy is Strategy.TC:
            instance.P = instance.aux_to_target(state).inverse().congruence(instance.P)
        logger.debug(
            f"Фильтр {settings.variant.value}/{settings.strategy.value} инициализирован, N={state.dim}"
        )
        return instance

    @property
    def variant(self) -> FilterVariant:
        return self.settings.variant

    @property
    def strategy(self) -> Strategy:
        return self.settings.strategy

    @property
    def tracked_variant(self) -> FilterVariant:
        """Вариант, в координатах которого хранится P."""
        return self.settings.auxiliary if self.strategy is Strategy.TC else self.variant

    def aux_to_target(self, state: VinsState) -> LowerBlockMatrix:
        return transform_closed_form(self.settings.auxiliary, self.variant, state).blocks

    def target_covariance(self) -> np.ndarray:
        """Ковариация целевого варианта (для TC восстанавливается P* = T P T^T)."""
        if self.strategy is Strategy.TC:
            return self.aux_to_target(self.state).congruence(self.P)
        return self.P.copy()

    def _symmetrize(self, P: np.ndarray, phase: str) -> np.ndarray:
        asym = np.max(np.abs(P - P.T)) if P.size else 0.0
        scale = max(np.max(np.abs(P)), 1e-300) if P.size else 1.0
        if asym > self.settings.symmetry_tolerance * scale:
            logger.warning(f"Асимметрия ковариации {asym:.3e} после фазы {phase}, выполняется симметризация")
        return 0.5 * (P + P.T)

    def _steps(self, variant: FilterVariant, intervals: Sequence[Tuple[ImuSample, float]]) -> Tuple[
        List[StructuredPhiQ], VinsState
    ]:
        state = self.state
        steps = []
        for sample, dt in intervals:
            steps.append(discrete_step(
                variant, state, sample, dt, self.noise_density,
                substeps=self.settings.substeps, quadrature=self.settings.quadrature,
            ))
            state = propagate_mean(state, sample, dt)
        return steps, state

    def propagate(self, samples: Sequence[ImuSample], t_end: float) -> None:
        """
        Распространяет оценку и ковариацию по окну ИНС до момента t_end.

        Args:
            samples: Отсчеты ИНС в порядке времени, первый не раньше текущего времени фильтра.
            t_end: Время конца окна.
        """
        if not samples:
            return
        started = time.perf_counter()
        intervals = imu_intervals(samples, t_end)
        n = self.state.dim

        with flops.counting(self.settings.count_flops), flops.scope("propagate"):
            if self.strategy is Strategy.NAIVE:
                steps, new_state = self._steps(self.variant, intervals)
                total = accumulate(steps)
                Phi = total.dense_phi()
                P = flops.matmul(flops.matmul(Phi, self.P), Phi.T) + total.dense_q()
            else:
                steps, new_state = self._steps(self.settings.auxiliary, intervals)
                total = accumulate(steps)
                if self.strategy is Strategy.TP:
                    T_start = self.aux_to_target(self.state)
                    T_end = self.aux_to_target(new_state)
                    phi_target = T_end @ total.phi @ T_start.inverse()
                    P = phi_target.congruence(self.P) + _lift_core_noise(T_end, total.q_core)
                else:
                    P = total.phi.congruence(self.P) + _pad_core(total.q_core, n)

        self.P = self._symmetrize(P, "propagate")
        self.state = new_state
        self.t = t_end
        self.timings["propagate"] += time.perf_counter() - started

    def _predicted(self, ids: Sequence[int]) -> np.ndarray:
        return np.concatenate([measure(self.state, i, self.camera) for i in ids])

    def correct(self, batch: CorrectionBatch) -> None:
        """
        Коррекция по части наблюдений кадра.

        Args:
            batch: Наблюдения (идентификаторы и пиксели).
        """
        if not len(batch):
            return
        started = time.perf_counter()
        residual = np.asarray(batch.pixels, dtype=float).ravel() - self._predicted(batch.ids)
        R_meas = (self.noise.sigma_px ** 2) * np.eye(residual.size)

        with flops.counting(self.settings.count_flops), flops.scope("correct"):
            if self.strategy is Strategy.TC:
                H = measurement_H(self.settings.auxiliary, self.state, batch.ids, self.camera)
                delta_aux, P, _ = kalman_update(self.P, H, residual, R_meas, self.settings.joseph)
                T_prior = self.aux_to_target(self.state)
                delta = T_prior.apply(delta_aux)
                new_state = chart_inverse(self.variant, self.state, delta)
                relative = self.aux_to_target(new_state).inverse() @ T_prior
                P = apply_relative_transform(relative, P)
            else:
                H = measurement_H(self.variant, self.state, batch.ids, self.camera)
                delta, P, _ = kalman_update(self.P, H, residual, R_meas, self.settings.joseph)
                new_state = chart_inverse(self.variant, self.state, delta)

        self.P = self._symmetrize(P, "correct")
        self.state = new_state
        self.timings["correct"] += time.perf_counter() - started

    def augment(self, landmark_id: int, prior: LandmarkPrior) -> None:
        """
        Добавляет ориентир в состояние и расширяет отслеживаемую ковариацию.

        Args:
            landmark_id: Идентификатор ориентира.
            prior: Начальная оценка ориентира.
        """
        new_state = self.state.with_landmark(landmark_id, prior.position)
        hub = hub_transform(self.tracked_variant, new_state)
        L_new = hub.coupling_dense()[-3:]
        D_new = hub.landmark_blocks()[-1]
        eskf_rows = L_new.copy()
        if prior.eskf_coupling is not None:
            eskf_rows += D_new @ prior.eskf_coupling
        C = np.linalg.solve(hub.core.T, eskf_rows.T).T

        n = self.state.dim
        cross = C @ self.P[:IMU_DIM, :]
        block = C @ self.P[:IMU_DIM, :IMU_DIM] @ C.T + prior.sigma ** 2 * D_new @ D_new.T
        P = np.zeros((n + 3, n + 3))
        P[:n, :n] = self.P
        P[n:, :n] = cross
        P[:n, n:] = cross.T
        P[n:, n:] = 0.5 * (block + block.T)

        self.P = P
        self.state = new_state
        logger.debug(f"Ориентир {landmark_id} добавлен, N={new_state.dim}")

    def process_frame(self, frame: CameraObservation, initializer: Optional[LandmarkInitializer] = None) -> None:
        """Добавляет новые ориентиры кадра и выполняет коррекцию партиями."""
        known = []
        for k, landmark_id in enumerate(frame.ids):
            if landmark_id not in self.state.ids:
                if initializer is None:
                    continue
                self.augment(landmark_id, initializer(landmark_id, self.state))
            known.append(k)
        for batch in split_batches(frame.subset(known), self.settings.batches):
            self.correct(batch)

    def snapshot(self, recover_target: bool = True) -> FilterSnapshot:
        covariance = self.target_covariance() if recover_target else self.P.copy()
        return FilterSnapshot(self.t, self.state, covariance)


def imu_window(imu: Sequence[ImuSample], times: Sequence[float], t_start: float, t_end: float) -> List[ImuSample]:
    """
    Отсчеты ИНС, действующие на интервале [t_start, t_end).

    Первым берется отсчет, удерживаемый в момент t_start; его метка сдвигается на t_start,
    если t_start лежит между отсчетами.
    """
    lo = max(bisect_right(times, t_start) - 1, 0)
    hi = bisect_left(times, t_end)
    window = list(imu[lo:hi])
    if window and window[0].t < t_start:
        window[0] = replace(window[0], t=t_start)
    return window


def run_sequence(
    instance: FilterInstance,
    imu: Sequence[ImuSample],
    frames: Sequence[CameraObservation],
    initializer: Optional[LandmarkInitializer] = None,
    recover_target: bool = True,
    progress: Optional[Callable[[int], None]] = None,
    t_end: Optional[float] = None,
    tail_period: Optional[float] = None,
) -> List[FilterSnapshot]:
    """
    Чередует распространение и коррекцию по потокам ИНС и камеры.

    После последнего кадра оставшийся поток ИНС распространяется до t_end. Без кадров это чистое
    счисление пути: оценки выдаются через каждые tail_period секунд и в конце потока.

    Args:
        instance: Фильтр (изменяется на месте).
        imu: Поток ИНС.
        frames: Поток кадров.
        initializer: Начальные оценки новых ориентиров; без него новые ориентиры пропускаются.
        recover_target: Возвращать ковариацию целевого варианта (для TC через восстановление P*).
        progress: Колбэк, вызываемый после каждого кадра.
        t_end: Конец потока ИНС; по умолчанию метка последнего отсчета.
        tail_period: Период оценок на хвосте после последнего кадра. Если не задан, оценка на хвосте
            выдается только при пустом потоке кадров, одна в конце.

    Returns:
        Апостериорные оценки на моменты кадров, затем оценки счисления на хвосте.
    """
    times = [s.t for s in imu]
    trajectory = []
    for k, frame in enumerate(frames):
        if frame.t > instance.t:
            instance.propagate(imu_window(imu, times, instance.t, frame.t), frame.t)
        instance.process_frame(frame, initializer)
        trajectory.append(instance.snapshot(recover_target))
        if progress is not None:
            progress(k)

    if not imu:
        return trajectory
    t_end = times[-1] if t_end is None else t_end
    if tail_period is not None and tail_period <= 0.0:
        raise ValueError(f"Период оценок на хвосте должен быть положительным: {tail_period}")
    emit = tail_period is not None or not frames
    step = tail_period if tail_period is not None else t_end - instance.t
    while instance.t < t_end:
        t_next = min(instance.t + step, t_end)
        if t_end - t_next < 1e-9 * max(1.0, abs(t_end)):
            t_next = t_end
        window = imu_window(imu, times, instance.t, t_next)
        if not window:
            logger.warning(
                f"Нет отсчетов ИНС на интервале [{instance.t:.3f}, {t_next:.3f}) с, распространение остановлено"
            )
            break
        instance.propagate(window, t_next)
        if emit:
            trajectory.append(instance.snapshot(recover_target))
    if not frames:
        logger.info(f"Счисление пути без кадров до t={instance.t:.3f} с, оценок: {len(trajectory)}")
    return trajectory

"""Анализ наблюдаемости: стеки H_k Phi(t_k, t_0), численные ядра и аналитические ненаблюдаемые базисы.

Ненаблюдаемые направления VINS: глобальное смещение (3 столбца) и поворот по рысканию вокруг g (1 столбец).
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from eqf.blocks import IMU_DIM, LowerBlockMatrix
from eqf.charts import POS, THETA, VEL, FilterVariant, landmark_slice
from eqf.errors import DimensionMismatchError
from eqf.jacobians import ProcessNoiseDensity, discrete_step, measurement_H
from eqf.liegroups import skew
from eqf.transforms import TransformMatrix, transform_closed_form
from eqf.vins_model import GRAVITY, CameraModel, ImuSample, VinsState, flow, imu_intervals
from utils.logger import setup_logger

logger = setup_logger("eqf.observability")

RANK_TOLERANCE = 1e-8
INDEPENDENCE_ANGLE = 1e-10
UNOBSERVABLE_DIM = 4

STATE_INDEPENDENT_VARIANTS = (FilterVariant.RI_EKF, FilterVariant.ISD_EQF, FilterVariant.T_EQF)

_ZERO_NOISE = ProcessNoiseDensity(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class UnobservableBasis:
    """Базис N ((15+3m) x 4): столбцы 0-2 для смещения, столбец 3 для рыскания."""

    variant: FilterVariant
    matrix: np.ndarray
    state_independent: bool

    @property
    def m(self) -> int:
        return (self.matrix.shape[0] - IMU_DIM) // 3


@dataclass(frozen=True, eq=False)
class ObservabilityStack:
    """
    Матрица наблюдаемости, собранная из блоков H_k Phi(t_k, t_0).

    Args:
        variant: Вариант фильтра.
        matrix: Сложенные строки.
        frame_indices: Индексы отсчетов ИНС, в которые сняты кадры.
        ids: Наблюдаемые ориентиры.
    """

    variant: FilterVariant
    matrix: np.ndarray
    frame_indices: List[int]
    ids: List[int]

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def rank(self, tol: float = RANK_TOLERANCE) -> int:
        s = self.singular_values()
        if not s.size or s[0] == 0.0:
            return 0
        return int(np.sum(s > tol * s[0]))

    def residual(self, N: Union[UnobservableBasis, np.ndarray]) -> float:
        """||M N|| / (||M|| ||N||)."""
        N = N.matrix if isinstance(N, UnobservableBasis) else N
        return float(np.linalg.norm(self.matrix @ N) / (np.linalg.norm(self.matrix) * np.linalg.norm(N)))


@dataclass
class StateIndependenceReport:
    variant: FilterVariant
    independent: bool
    angle: float
    bitwise_equal: bool


@dataclass
class ObservabilityReport:
    """Сводка по одному варианту для CLI."""

    variant: FilterVariant
    rank: int
    dimension: int
    nullspace_dim: int
    basis_residual: float
    principal_angle: float
    state_independent: bool
    details: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "variant": self.variant.value,
            "rank": self.rank,
            "dimension": self.dimension,
            "nullspace_dim": self.nullspace_dim,
            "basis_residual": self.basis_residual,
            "principal_angle": self.principal_angle,
            "state_independent": self.state_independent,
            **self.details,
        }


def _eskf_basis(xhat: VinsState) -> np.ndarray:
    g = GRAVITY
    N = np.zeros((xhat.dim, UNOBSERVABLE_DIM))
    N[POS, 0:3] = np.eye(3)
    N[THETA, 3] = -xhat.R.T @ g
    N[VEL, 3] = skew(xhat.v) @ g
    N[POS, 3] = skew(xhat.p) @ g
    for i, f in enumerate(xhat.landmarks):
        N[landmark_slice(i), 0:3] = np.eye(3)
        N[landmark_slice(i), 3] = skew(f) @ g
    return N


def _sd_basis(xhat: VinsState) -> np.ndarray:
    N = np.zeros((xhat.dim, UNOBSERVABLE_DIM))
    N[POS, 0:3] = np.eye(3)
    N[THETA, 3] = -GRAVITY
    for i, f in enumerate(xhat.landmarks):
        N[landmark_slice(i), 0:3] = np.eye(3)
        N[landmark_slice(i), 3] = skew(f) @ GRAVITY
    return N


def _invariant_basis(m: int) -> np.ndarray:
    N = np.zeros((IMU_DIM + 3 * m, UNOBSERVABLE_DIM))
    N[POS, 0:3] = np.eye(3)
    N[THETA, 3] = -GRAVITY
    for i in range(m):
        N[landmark_slice(i), 0:3] = np.eye(3)
    return N


def _li_basis(xhat: VinsState) -> np.ndarray:
    Rt = xhat.R.T
    g = GRAVITY
    N = np.zeros((xhat.dim, UNOBSERVABLE_DIM))
    N[POS, 0:3] = Rt
    N[THETA, 3] = -Rt @ g
    N[VEL, 3] = Rt @ skew(xhat.v) @ g
    N[POS, 3] = Rt @ skew(xhat.p) @ g
    for i, f in enumerate(xhat.landmarks):
        N[landmark_slice(i), 0:3] = Rt
        N[landmark_slice(i), 3] = Rt @ skew(f) @ g
    return N


def analytic_basis(variant: FilterVariant, xhat: VinsState) -> UnobservableBasis:
    """
    Замкнутая форма ненаблюдаемого базиса варианта в оценке xhat.

    Args:
        variant: Вариант фильтра.
        xhat: Оценка.

    Returns:
        UnobservableBasis; для RI-EKF, ISD-EqF и T-EqF матрица не зависит от оценки.
    """
    variant = FilterVariant(variant)
    if variant is FilterVariant.ESKF:
        N = _eskf_basis(xhat)
    elif variant is FilterVariant.SD_EQF:
        N = _sd_basis(xhat)
    elif variant is FilterVariant.LI_EKF:
        N = _li_basis(xhat)
    else:
        N = _invariant_basis(xhat.m)
    return UnobservableBasis(variant, N, variant in STATE_INDEPENDENT_VARIANTS)


def nullspace(M: np.ndarray, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Ортонормированный базис правых сингулярных векторов с sigma < tol * sigma_max."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.any(M):
        return np.eye(M.shape[1])
    return scipy.linalg.null_space(M, rcond=tol)


def principal_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Наибольший главный угол между подпространствами span(A) и span(B), рад."""
    if A.shape[1] != B.shape[1]:
        return float(np.pi / 2)
    return float(np.max(scipy.linalg.subspace_angles(A, B)))


def transform_basis(
    T: Union[TransformMatrix, LowerBlockMatrix, np.ndarray], N: Union[UnobservableBasis, np.ndarray]
) -> np.ndarray:
    """
    Переносит ненаблюдаемый базис в координаты другого варианта: N* = T N.

    Args:
        T: Матрица преобразования.
        N: Базис в исходных координатах.

    Returns:
        Матрица N*.
    """
    N = N.matrix if isinstance(N, UnobservableBasis) else np.asarray(N, dtype=float)
    blocks = T.blocks if isinstance(T, TransformMatrix) else T
    if blocks.shape[1] != N.shape[0]:
        raise DimensionMismatchError(f"T {blocks.shape} и N {N.shape} несовместимы")
    return blocks @ N


def state_independence_report(variant: FilterVariant, x1: VinsState, x2: VinsState) -> StateIndependenceReport:
    """Сравнивает аналитические базисы в двух оценках по наибольшему главному углу."""
    if x1.m != x2.m:
        raise DimensionMismatchError(f"Оценки с разным числом ориентиров: {x1.m} и {x2.m}")
    N1 = analytic_basis(variant, x1).matrix
    N2 = analytic_basis(variant, x2).matrix
    bitwise = bool(np.array_equal(N1, N2))
    angle = 0.0 if bitwise else principal_angle(N1, N2)
    return StateIndependenceReport(FilterVariant(variant), angle < INDEPENDENCE_ANGLE, angle, bitwise)


def linearization_trajectory(x0: VinsState, samples: Sequence[ImuSample], t_end: float) -> List[VinsState]:
    """Оценки вдоль потока без шума: по одной на каждый отсчет ИНС и конечная в t_end."""
    states = [x0]
    for sample, dt in imu_intervals(samples, t_end):
        states.append(flow(states[-1], sample.gyro, sample.accel, dt))
    return states


def build_stack(
    variant: FilterVariant,
    states: Sequence[VinsState],
    samples: Sequence[ImuSample],
    t_end: float,
    frame_indices: Sequence[int],
    camera: CameraModel,
    ids: Optional[Sequence[int]] = None,
) -> ObservabilityStack:
    """
    Собирает стек H_k Phi(t_k, t_0) по кадрам.

    Args:
        variant: Вариант фильтра.
        states: Точки линеаризации, len(samples) + 1 штук (например, из linearization_trajectory).
        samples: Отсчеты ИНС.
        t_end: Время конца окна.
        frame_indices: Индексы точек линеаризации, в которых сняты кадры.
        camera: Модель камеры.
        ids: Наблюдаемые ориентиры (по умолчанию все ориентиры состояния).

    Returns:
        ObservabilityStack.
    """
    variant = FilterVariant(variant)
    intervals = imu_intervals(samples, t_end)
    if len(states) != len(intervals) + 1:
        raise DimensionMismatchError(f"Нужно {len(intervals) + 1} точек линеаризации, получено {len(states)}")
    frames = sorted(set(int(k) for k in frame_indices))
    if not frames or frames[0] < 0 or frames[-1] > len(intervals):
        raise ValueError(f"Индексы кадров вне окна: {frame_indices}")
    ids = list(states[0].ids if ids is None else ids)

    n = states[0].dim
    Phi = np.eye(n)
    rows = []
    for k in range(frames[-1] + 1):
        if k in frames:
            rows.append(measurement_H(variant, states[k], ids, camera) @ Phi)
        if k < frames[-1]:
            sample, dt = intervals[k]
            step = discrete_step(variant, states[k], sample, dt, _ZERO_NOISE)
            Phi = step.phi.apply(Phi)

    matrix = np.vstack(rows)
    logger.debug(f"Стек наблюдаемости {variant.value}: {matrix.shape[0]}x{matrix.shape[1]}, кадров {len(frames)}")
    return ObservabilityStack(variant, matrix, frames, ids)


def stack_transfer_residual(
    source: FilterVariant,
    target: FilterVariant,
    states: Sequence[VinsState],
    samples: Sequence[ImuSample],
    t_end: float,
    frame_indices: Sequence[int],
    camera: CameraModel,
) -> float:
    """Относительная невязка O_target - O_source T(x_0)^-1 для стеков на одной траектории."""
    stack_source = build_stack(source, states, samples, t_end, frame_indices, camera)
    stack_target = build_stack(target, states, samples, t_end, frame_indices, camera)
    T_inv = transform_closed_form(source, target, states[0]).blocks.inverse()
    predicted = T_inv.rapply(stack_source.matrix)
    return float(np.linalg.norm(stack_target.matrix - predicted) / np.linalg.norm(stack_target.matrix))


def perturb_estimates(
    states: Sequence[VinsState], rng: np.random.Generator, landmark_sigma: float = 0.1, position_sigma: float = 0.05
) -> List[VinsState]:
    """Независимо возмущает положение и ориентиры каждой точки линеаризации."""
    perturbed = []
    for state in states:
        landmarks = state.landmarks + landmark_sigma * rng.standard_normal(state.landmarks.shape)
        p = state.p + position_sigma * rng.standard_normal(3)
        perturbed.append(VinsState(state.R, state.v, p, state.bw, state.ba, landmarks, state.ids))
    return perturbed


def variant_report(
    variant: FilterVariant,
    states: Sequence[VinsState],
    samples: Sequence[ImuSample],
    t_end: float,
    frame_indices: Sequence[int],
    camera: CameraModel,
    tol: float = RANK_TOLERANCE,
) -> ObservabilityReport:
    """Ранг стека, размерность ядра и сравнение с аналитическим базисом в начальной оценке."""
    stack = build_stack(variant, states, samples, t_end, frame_indices, camera)
    basis = analytic_basis(variant, states[0])
    kernel = nullspace(stack.matrix, tol)
    angle = principal_angle(kernel, basis.matrix)
    return ObservabilityReport(
        variant=FilterVariant(variant),
        rank=stack.rank(tol),
        dimension=stack.matrix.shape[1],
        nullspace_dim=kernel.shape[1],
        basis_residual=stack.residual(basis),
        principal_angle=angle,
        state_independent=basis.state_independent,
    )


def excitation_trajectory(
    m: int, duration: float, imu_rate: int, seed: int = 0, altitude: float = 5.0
) -> Tuple[List[VinsState], List[ImuSample], float]:
    """
    Траектория с переменными угловой скоростью и ускорением над m видимыми ориентирами.

    Args:
        m: Число ориентиров.
        duration: Длительность, с.
        imu_rate: Частота ИНС, Гц.
        seed: Seed расположения ориентиров.
        altitude: Высота полета, м.

    Returns:
        Кортеж (точки линеаризации, отсчеты ИНС, время конца окна).
    """
    rng = np.random.default_rng(seed)
    R_down = np.diag([1.0, -1.0, -1.0])
    landmarks = np.column_stack([rng.uniform(-2.0, 2.0, m), rng.uniform(-1.5, 1.5, m), rng.uniform(-0.5, 0.5, m)])
    state = VinsState(
        R_down, np.array([0.3, -0.2, 0.1]), np.array([0.0, 0.0, altitude]),
        np.zeros(3), np.zeros(3), landmarks, tuple(range(m)),
    )
    n = int(round(duration * imu_rate))
    samples = []
    states = [state]
    for i in range(n):
        t = i / imu_rate
        gyro = np.array([0.3 * np.sin(2.0 * t), 0.2 * np.cos(3.0 * t), 0.5 * np.sin(t) + 0.2])
        desired = np.array([0.5 * np.sin(2.0 * t), 0.5 * np.cos(1.5 * t), 0.2 * np.sin(3.0 * t)])
        accel = states[-1].R.T @ (desired - GRAVITY)
        samples.append(ImuSample(t, gyro, accel))
        states.append(flow(states[-1], gyro, accel, (i + 1) / imu_rate - t))
    return states, samples, n / imu_rate

"""Модель VINS: состояние, динамика по ИНС, модель камеры и групповые действия."""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from eqf.errors import BehindCameraError, DimensionMismatchError, NonMonotonicTimeError
from eqf.liegroups import (
    IsdBiasElement,
    Se23Element,
    Sek3Element,
    SemiDirectBiasElement,
    adjoint_se3,
    so3_exp,
    so3_gamma2,
    so3_left_jacobian,
)

GRAVITY = np.array([0.0, 0.0, -9.81])
MIN_DEPTH = 0.05


@dataclass(frozen=True, eq=False)
class VinsState:
    """
    Полное состояние xi = (R, v, p, b_w, b_a, f_1..f_m).

    Args:
        R: Ориентация (мир <- ИНС).
        v: Скорость в мировой системе, м/с.
        p: Положение в мировой системе, м.
        bw: Смещение гироскопа, рад/с.
        ba: Смещение акселерометра, м/с^2.
        landmarks: Положения ориентиров, массив (m, 3).
        ids: Идентификаторы ориентиров в порядке строк landmarks.
    """

    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    bw: np.ndarray
    ba: np.ndarray
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    ids: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "landmarks", landmarks)
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(self.ids) != landmarks.shape[0]:
            raise DimensionMismatchError(
                f"Число идентификаторов ({len(self.ids)}) не равно числу ориентиров ({landmarks.shape[0]})"
            )

    @property
    def m(self) -> int:
        return self.landmarks.shape[0]

    @property
    def dim(self) -> int:
        return 15 + 3 * self.m

    @property
    def bias(self) -> np.ndarray:
        return np.concatenate([self.bw, self.ba])

    @property
    def nav(self) -> Se23Element:
        return Se23Element(self.R, self.v, self.p)

    @property
    def extended_pose(self) -> Sek3Element:
        """Элемент SE_{2+m}(3) со столбцами (v, p, f_1, ..., f_m)."""
        return Sek3Element(self.R, np.vstack([self.v, self.p, self.landmarks]))

    def landmark_index(self, landmark_id: int) -> int:
        return self.ids.index(landmark_id)

    def landmark(self, landmark_id: int) -> np.ndarray:
        return self.landmarks[self.landmark_index(landmark_id)]

    def with_landmark(self, landmark_id: int, position: np.ndarray) -> "VinsState":
        if landmark_id in self.ids:
            raise DimensionMismatchError(f"Ориентир {landmark_id} уже есть в состоянии")
        landmarks = np.vstack([self.landmarks, np.asarray(position, dtype=float).reshape(1, 3)])
        return replace(self, landmarks=landmarks, ids=self.ids + (int(landmark_id),))

    def with_landmarks(self, landmarks: np.ndarray) -> "VinsState":
        return replace(self, landmarks=landmarks)

    def is_finite(self) -> bool:
        parts = (self.R, self.v, self.p, self.bw, self.ba, self.landmarks)
        return all(np.all(np.isfinite(x)) for x in parts)


@dataclass(frozen=True)
class ImuSample:
    """Отсчет ИНС: время, угловая скорость и удельная сила."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class CameraObservation:
    """Кадр камеры: время и пары (идентификатор ориентира, пиксель uv)."""

    t: float
    ids: Tuple[int, ...]
    pixels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices: Sequence[int]) -> "CameraObservation":
        indices = list(indices)
        return CameraObservation(self.t, tuple(self.ids[i] for i in indices), self.pixels[indices])


class NoiseSpec(BaseModel):
    """Плотности шумов ИНС (непрерывное время) и шум пикселей."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma_gyro: float = Field(1.7e-4, ge=0.0)
    sigma_accel: float = Field(2.0e-3, ge=0.0)
    sigma_gyro_walk: float = Field(2.0e-5, ge=0.0)
    sigma_accel_walk: float = Field(3.0e-3, ge=0.0)
    sigma_px: float = Field(1.0, ge=0.0)


class CameraModel(BaseModel):
    """Камера-обскура с внешней калибровкой Upsilon (ИНС -> камера)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    fx: float = Field(458.0, gt=0.0)
    fy: float = Field(458.0, gt=0.0)
    cx: float = 376.0
    cy: float = 240.0
    width: int = Field(752, gt=0)
    height: int = Field(480, gt=0)
    extrinsic_rotation: List[List[float]] = Field(default_factory=lambda: np.eye(3).tolist())
    extrinsic_translation: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    def rotation(self) -> np.ndarray:
        return np.asarray(self.extrinsic_rotation, dtype=float)

    def translation(self) -> np.ndarray:
        return np.asarray(self.extrinsic_translation, dtype=float)

    def to_camera(self, point_imu: np.ndarray) -> np.ndarray:
        return self.rotation() @ point_imu + self.translation()

    def project(self, point_camera: np.ndarray) -> np.ndarray:
        x, y, z = point_camera
        return np.array([self.fx * x / z + self.cx, self.fy * y / z + self.cy])

    def projection_jacobian(self, point_camera: np.ndarray) -> np.ndarray:
        """Якобиан проекции по точке в системе камеры, 2x3."""
        x, y, z = point_camera
        return np.array([
            [self.fx / z, 0.0, -self.fx * x / z**2],
            [0.0, self.fy / z, -self.fy * y / z**2],
        ])

    def in_bounds(self, uv: np.ndarray) -> bool:
        return bool(0.0 <= uv[0] < self.width and 0.0 <= uv[1] < self.height)


def landmark_in_imu(state: VinsState, landmark_id: int) -> np.ndarray:
    return state.R.T @ (state.landmark(landmark_id) - state.p)


def measure(state: VinsState, landmark_id: int, camera: CameraModel) -> np.ndarray:
    """
    Измерение пикселя ориентира uv = pi(Upsilon(R^T (f - p))).

    Args:
        state: Состояние.
        landmark_id: Идентификатор ориентира.
        camera: Модель камеры.

    Returns:
        Пиксельные координаты (u, v).
    """
    point = camera.to_camera(landmark_in_imu(state, landmark_id))
    if point[2] <= MIN_DEPTH:
        raise BehindCameraError(f"Ориентир {landmark_id} за камерой: глубина {point[2]:.3f} м")
    return camera.project(point)


def flow(state: VinsState, gyro: np.ndarray, accel: np.ndarray, dt: float) -> VinsState:
    """Точное решение модели при постоянном входе; dt может быть отрицательным."""
    w = (gyro - state.bw) * dt
    a = accel - state.ba
    R_new = state.R @ so3_exp(w)
    v_new = state.v + dt * state.R @ (so3_left_jacobian(w) @ a) + GRAVITY * dt
    p_new = state.p + state.v * dt + dt**2 * state.R @ (so3_gamma2(w) @ a) + 0.5 * GRAVITY * dt**2
    return replace(state, R=R_new, v=v_new, p=p_new)


def propagate_mean(state: VinsState, imu: ImuSample, dt: float, substeps: int = 1) -> VinsState:
    """
    Распространяет оценку без шума при удержании входа нулевого порядка.

    Args:
        state: Текущая оценка.
        imu: Отсчет ИНС, действующий на интервале.
        dt: Длительность интервала, с.
        substeps: Число равных подшагов.

    Returns:
        Оценка в конце интервала.
    """
    if not dt > 0.0:
        raise NonMonotonicTimeError(f"Шаг интегрирования должен быть положительным, получено dt={dt}")
    h = dt / substeps
    for _ in range(substeps):
        state = flow(state, imu.gyro, imu.accel, h)
    return state


def imu_intervals(samples: Sequence[ImuSample], t_end: float) -> List[Tuple[ImuSample, float]]:
    """Пары (отсчет, длительность) для окна ИНС, заканчивающегося в t_end."""
    intervals = []
    for i, sample in enumerate(samples):
        t_next = samples[i + 1].t if i + 1 < len(samples) else t_end
        dt = t_next - sample.t
        if not dt > 0.0:
            raise NonMonotonicTimeError(f"Метки времени ИНС не возрастают: {sample.t} -> {t_next}")
        intervals.append((sample, dt))
    return intervals


def propagate_mean_window(state: VinsState, samples: Sequence[ImuSample], t_end: float) -> VinsState:
    for sample, dt in imu_intervals(samples, t_end):
        state = flow(state, sample.gyro, sample.accel, dt)
    return state


def state_origin(m: int = 0, ids: Optional[Sequence[int]] = None) -> VinsState:
    """Начало координат xi = (I, 0, 0)."""
    ids = tuple(ids) if ids is not None else tuple(range(m))
    return VinsState(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros((m, 3)), ids)


def _state_from_parts(
    template: VinsState, R: np.ndarray, v: np.ndarray, p: np.ndarray, bias: np.ndarray, landmarks: np.ndarray
) -> VinsState:
    return VinsState(R, v, p, bias[:3], bias[3:], landmarks, template.ids)


def action_sd(X: SemiDirectBiasElement, state: VinsState) -> VinsState:
    """
    Действие полупрямой группы: (A C, Ad_Gamma(C)^-1 (b - gamma), f + p).

    Args:
        X: Элемент группы.
        state: Состояние.

    Returns:
        Преобразованное состояние.
    """
    if X.m != state.m:
        raise DimensionMismatchError(f"Элемент группы для m={X.m}, состояние с m={state.m}")
    AC = state.nav @ X.C
    C_inv = X.C.inverse()
    bias = adjoint_se3(*C_inv.se3_part()) @ (state.bias - X.gamma)
    return _state_from_parts(state, AC.R, AC.a, AC.b, bias, state.landmarks + X.p.reshape(-1, 3))


def action_isd(X: IsdBiasElement, state: VinsState) -> VinsState:
    """Действие инвариантной группы: (D B, Ad_Gamma(B)^-1 (b - gamma))."""
    if X.m != state.m:
        raise DimensionMismatchError(f"Элемент группы для m={X.m}, состояние с m={state.m}")
    DB = state.extended_pose @ X.B
    B_inv = X.B.inverse()
    bias = adjoint_se3(*B_inv.se3_part()) @ (state.bias - X.gamma)
    return _state_from_parts(state, DB.R, DB.cols[0], DB.cols[1], bias, DB.cols[2:])


def sd_element_from_state(state: VinsState) -> SemiDirectBiasElement:
    """Элемент X, переводящий начало координат в state."""
    A = state.nav
    gamma = -adjoint_se3(*A.se3_part()) @ state.bias
    return SemiDirectBiasElement(A, gamma, state.landmarks.ravel().copy())


def isd_element_from_state(state: VinsState) -> IsdBiasElement:
    D = state.extended_pose
    gamma = -adjoint_se3(*D.se3_part()) @ state.bias
    return IsdBiasElement(D, gamma)


def random_state(rng: np.random.Generator, m: int = 0, spread: float = 1.0) -> VinsState:
    """
    Случайное состояние с ориентирами перед камерой (ось z связанной системы).

    Args:
        rng: Генератор случайных чисел.
        m: Число ориентиров.
        spread: Масштаб скорости, положения и смещений.

    Returns:
        VinsState с идентификаторами 0..m-1.
    """
    R = so3_exp(rng.uniform(-np.pi, np.pi, 3) * 0.5)
    p = spread * rng.standard_normal(3)
    y = np.column_stack([rng.uniform(-1.0, 1.0, m), rng.uniform(-1.0, 1.0, m), rng.uniform(2.0, 5.0, m)])
    landmarks = p + y @ R.T
    return VinsState(
        R,
        spread * rng.standard_normal(3),
        p,
        0.01 * spread * rng.standard_normal(3),
        0.05 * spread * rng.standard_normal(3),
        landmarks,
        tuple(range(m)),
    )

"""Детерминированный симулятор ИНС и монокулярной камеры на аналитических траекториях."""

import csv
import os
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Any, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from eqf.liegroups import so3_left_jacobian, so3_log
from eqf.vins_model import (
    GRAVITY,
    MIN_DEPTH,
    CameraModel,
    CameraObservation,
    ImuSample,
    NoiseSpec,
    VinsState,
    flow,
)
from utils.logger import setup_logger

logger = setup_logger("experiments.simulator")

R_DOWN = np.diag([1.0, -1.0, -1.0])


class Purpose(IntEnum):
    """Назначения независимых подпотоков случайных чисел."""

    LANDMARKS = 0
    BIAS_WALK = 1
    IMU_NOISE = 2
    PIXEL_NOISE = 3
    INITIAL_ESTIMATE = 4
    LANDMARK_PRIOR = 5


def make_rng(seed: int, purpose: Purpose, run_index: int = 0) -> np.random.Generator:
    """Генератор Philox для подпотока (seed, purpose, run_index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(purpose), int(run_index)])))


class TrajectorySpec(BaseModel):
    """Аналитическая траектория полета над плоскостью ориентиров."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: Literal["figure_eight", "circle", "sinusoid_3d"] = "figure_eight"
    scale: float = Field(3.0, ge=0.0)
    period: float = Field(20.0, gt=0.0)
    duration: float = Field(60.0, gt=0.0)
    altitude: float = Field(6.0, gt=0.0)
    yaw_mode: Literal["tangent", "constant_rate"] = "constant_rate"
    yaw_rate: float = 0.3
    tilt: float = Field(0.05, ge=0.0)
    tilt_period: float = Field(7.0, gt=0.0)


class WorldSettings(BaseModel):
    """Параметры мира и датчиков (по умолчанию базовые значения симулятора)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    imu_rate: int = Field(200, gt=0)
    camera_rate: int = Field(10, gt=0)
    max_landmarks: int = Field(40, gt=0)
    landmark_spacing: float = Field(1.5, gt=0.0)
    landmark_margin: float = Field(1.5, ge=0.0)
    landmark_height_jitter: float = Field(0.5, ge=0.0)
    gyro_bias: List[float] = Field(default_factory=lambda: [0.01, -0.01, 0.005])
    accel_bias: List[float] = Field(default_factory=lambda: [0.05, -0.03, 0.02])

    @model_validator(mode="after")
    def _check_rates(self) -> "WorldSettings":
        if self.imu_rate % self.camera_rate:
            raise ValueError(f"Частота ИНС {self.imu_rate} не кратна частоте камеры {self.camera_rate}")
        return self

    @property
    def steps_per_frame(self) -> int:
        return self.imu_rate // self.camera_rate


@dataclass(frozen=True)
class TruthSample:
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True, eq=False)
class SimWorld:
    """Мир симуляции: ориентиры, камера, шумы, частоты и seed."""

    landmarks: np.ndarray
    camera: CameraModel
    noise: NoiseSpec
    settings: WorldSettings
    seed: int

    @property
    def imu_rate(self) -> int:
        return self.settings.imu_rate

    @property
    def camera_rate(self) -> int:
        return self.settings.camera_rate


@dataclass(frozen=True, eq=False)
class Simulation:
    """
    Результат симуляции одного прогона.

    Args:
        world: Мир.
        truth: Истинные состояния (без ориентиров) во все моменты ИНС и в конце.
        imu: Измерения ИНС.
        frames: Кадры камеры.
        frame_indices: Индексы truth, соответствующие кадрам.
        run_index: Номер прогона.
    """

    world: SimWorld
    truth: List[VinsState]
    imu: List[ImuSample]
    frames: List[CameraObservation]
    frame_indices: List[int]
    run_index: int = 0

    def truth_with_landmarks(self, index: int, ids: Sequence[int]) -> VinsState:
        ids = tuple(ids)
        return replace(self.truth[index], landmarks=self.world.landmarks[list(ids)].reshape(-1, 3), ids=ids)


# Компоненты положения A sin(k W t + phase) по осям
_SHAPES = {
    "circle": ([(1.0, 1, np.pi / 2)], [(1.0, 1, 0.0)], []),
    "figure_eight": ([(1.0, 1, 0.0)], [(0.5, 2, 0.0)], []),
    "sinusoid_3d": ([(1.0, 1, np.pi / 2)], [(1.0, 1, 0.0)], [(0.1, 3, 0.0)]),
}


def _position_derivatives(spec: TrajectorySpec, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    W = 2.0 * np.pi / spec.period
    p = np.array([0.0, 0.0, spec.altitude])
    v = np.zeros(3)
    a = np.zeros(3)
    for axis, terms in enumerate(_SHAPES[spec.shape]):
        for amplitude, k, phase in terms:
            A = amplitude * spec.scale
            arg = k * W * t + phase
            p[axis] += A * np.sin(arg)
            v[axis] += A * k * W * np.cos(arg)
            a[axis] -= A * (k * W) ** 2 * np.sin(arg)
    return p, v, a


def _rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _attitude(spec: TrajectorySpec, t: float, v: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ориентация R = Rz(yaw) Ry(pitch) Rx(roll) R_down и угловая скорость в связанной системе."""
    if spec.yaw_mode == "constant_rate":
        yaw, yaw_dot = spec.yaw_rate * t, spec.yaw_rate
    else:
        speed2 = v[0] ** 2 + v[1] ** 2
        yaw = float(np.arctan2(v[1], v[0])) if speed2 > 1e-12 else 0.0
        yaw_dot = (v[0] * a[1] - v[1] * a[0]) / speed2 if speed2 > 1e-12 else 0.0

    Wt = 2.0 * np.pi / spec.tilt_period
    roll, roll_dot = spec.tilt * np.sin(Wt * t), spec.tilt * Wt * np.cos(Wt * t)
    pitch, pitch_dot = spec.tilt * np.sin(0.7 * Wt * t), 0.7 * spec.tilt * Wt * np.cos(0.7 * Wt * t)

    Rx, Ry = _rot_x(roll), _rot_y(pitch)
    R_tilt = _rot_z(yaw) @ Ry @ Rx
    omega_tilt = Rx.T @ Ry.T @ np.array([0.0, 0.0, yaw_dot]) + Rx.T @ np.array([0.0, pitch_dot, 0.0]) \
        + np.array([roll_dot, 0.0, 0.0])
    return R_tilt @ R_DOWN, R_DOWN.T @ omega_tilt


def truth_at(spec: TrajectorySpec, t: float) -> TruthSample:
    """
    Аналитическое истинное движение в момент t.

    Args:
        spec: Траектория.
        t: Время, 0 <= t <= duration.

    Returns:
        TruthSample с R, v, p и точными omega, a в связанной системе (a = R^T (dv/dt - g)).
    """
    p, v, a_world = _position_derivatives(spec, t)
    R, omega = _attitude(spec, t, v, a_world)
    return TruthSample(R, v, p, omega, R.T @ (a_world - GRAVITY))


def generate_landmarks(spec: TrajectorySpec, settings: WorldSettings, seed: int) -> np.ndarray:
    """Стратифицированная сетка со смещением внутри ячеек под областью полета."""
    rng = make_rng(seed, Purpose.LANDMARKS)
    extent = spec.scale + settings.landmark_margin
    step = settings.landmark_spacing
    edges = np.arange(-extent, extent, step)
    gx, gy = np.meshgrid(edges, edges, indexing="ij")
    n = gx.size
    jitter = rng.uniform(0.0, step, size=(n, 2))
    heights = rng.uniform(-settings.landmark_height_jitter, settings.landmark_height_jitter, size=n)
    return np.column_stack([gx.ravel() + jitter[:, 0], gy.ravel() + jitter[:, 1], heights])


def build_world(
    spec: TrajectorySpec,
    settings: WorldSettings,
    noise: NoiseSpec,
    camera: Optional[CameraModel] = None,
    seed: int = 0,
) -> SimWorld:
    camera = camera if camera is not None else CameraModel()
    return SimWorld(generate_landmarks(spec, settings, seed), camera, noise, settings, seed)


def gen_imu(world: SimWorld, spec: TrajectorySpec, run_index: int = 0) -> Tuple[List[ImuSample], List[VinsState]]:
    """
    Измерения ИНС и истинные состояния.

    Истинные R и v в каждом отсчете совпадают с аналитическими: вход на интервале подбирается так,
    чтобы точное решение модели с удержанием нулевого порядка попадало в аналитическую точку.

    Args:
        world: Мир.
        spec: Траектория.
        run_index: Номер прогона (определяет шумы и блуждание смещений).

    Returns:
        Кортеж (отсчеты ИНС, истинные состояния без ориентиров).
    """
    rate = world.imu_rate
    n = int(round(spec.duration * rate))
    times = np.arange(n + 1) / rate
    noise = world.noise
    bias_rng = make_rng(world.seed, Purpose.BIAS_WALK, run_index)
    imu_rng = make_rng(world.seed, Purpose.IMU_NOISE, run_index)

    start = truth_at(spec, 0.0)
    bw = np.asarray(world.settings.gyro_bias, dtype=float)
    ba = np.asarray(world.settings.accel_bias, dtype=float)
    state = VinsState(start.R, start.v, start.p, bw, ba)
    truth = [state]
    samples = []
    sigma_gyro_d = noise.sigma_gyro * np.sqrt(rate)
    sigma_accel_d = noise.sigma_accel * np.sqrt(rate)

    for i in range(n):
        dt = times[i + 1] - times[i]
        target = truth_at(spec, times[i + 1])
        omega = so3_log(state.R.T @ target.R) / dt
        accel = np.linalg.solve(
            dt * state.R @ so3_left_jacobian(omega * dt), target.v - state.v - GRAVITY * dt
        )
        gyro_clean = omega + state.bw
        accel_clean = accel + state.ba
        samples.append(ImuSample(
            float(times[i]),
            gyro_clean + sigma_gyro_d * imu_rng.standard_normal(3),
            accel_clean + sigma_accel_d * imu_rng.standard_normal(3),
        ))

        nxt = flow(state, gyro_clean, accel_clean, dt)
        bw = state.bw + noise.sigma_gyro_walk * np.sqrt(dt) * bias_rng.standard_normal(3)
        ba = state.ba + noise.sigma_accel_walk * np.sqrt(dt) * bias_rng.standard_normal(3)
        state = replace(nxt, bw=bw, ba=ba)
        truth.append(state)

    return samples, truth


def visible_landmarks(world: SimWorld, state: VinsState) -> Tuple[np.ndarray, np.ndarray]:
    """Идентификаторы и точные пиксели видимых ориентиров (не более max_landmarks, ближайшие)."""
    camera = world.camera
    points = (world.landmarks - state.p) @ state.R @ camera.rotation().T + camera.translation()
    depth = points[:, 2]
    in_front = depth > MIN_DEPTH
    uv = np.full((len(points), 2), -1.0)
    uv[in_front, 0] = camera.fx * points[in_front, 0] / depth[in_front] + camera.cx
    uv[in_front, 1] = camera.fy * points[in_front, 1] / depth[in_front] + camera.cy
    inside = in_front & (uv[:, 0] >= 0.0) & (uv[:, 0] < camera.width) & (uv[:, 1] >= 0.0) & (uv[:, 1] < camera.height)
    ids = np.flatnonzero(inside)
    if ids.size > world.settings.max_landmarks:
        ranges = np.linalg.norm(points[ids], axis=1)
        ids = np.sort(ids[np.argsort(ranges, kind="stable")[:world.settings.max_landmarks]])
    return ids, uv[ids]


def gen_camera(
    world: SimWorld, truth: Sequence[VinsState], run_index: int = 0
) -> Tuple[List[CameraObservation], List[int]]:
    """
    Кадры камеры на частоте camera_rate.

    Args:
        world: Мир.
        truth: Истинные состояния из gen_imu.
        run_index: Номер прогона.

    Returns:
        Кортеж (кадры, индексы истинных состояний кадров).
    """
    rng = make_rng(world.seed, Purpose.PIXEL_NOISE, run_index)
    q = world.settings.steps_per_frame
    frames = []
    indices = list(range(0, len(truth), q))
    for index in indices:
        ids, uv = visible_landmarks(world, truth[index])
        pixels = uv + world.noise.sigma_px * rng.standard_normal(uv.shape)
        frames.append(CameraObservation(index / world.imu_rate, tuple(int(i) for i in ids), pixels))
    counts = [len(f) for f in frames]
    logger.debug(f"Кадров: {len(frames)}, видимых ориентиров: мин {min(counts)}, ср {np.mean(counts):.1f}")
    return frames, indices


def simulate(world: SimWorld, spec: TrajectorySpec, run_index: int = 0) -> Simulation:
    imu, truth = gen_imu(world, spec, run_index)
    frames, indices = gen_camera(world, truth, run_index)
    return Simulation(world, truth, imu, frames, indices, run_index)


def _header(writer: Any, config_hash: str, seed: int) -> None:
    writer.writerow([f"# config_hash={config_hash}", f"seed={seed}"])


def export_csv(sim: Simulation, directory: str, config_hash: str = "", seed: int = 0) -> List[str]:
    """
    Сохраняет потоки симуляции в CSV.

    Args:
        sim: Симуляция.
        directory: Каталог вывода.
        config_hash: Хеш конфигурации для заголовка.
        seed: Seed для заголовка.

    Returns:
        Пути созданных файлов.
    """
    os.makedirs(directory, exist_ok=True)
    paths = []

    def open_writer(name: str, columns: List[str]):
        path = os.path.join(directory, name)
        paths.append(path)
        handle = open(path, "w", newline="", encoding="utf-8")
        writer = csv.writer(handle)
        _header(writer, config_hash, seed)
        writer.writerow(columns)
        return handle, writer

    handle, writer = open_writer("imu.csv", ["t", "wx", "wy", "wz", "ax", "ay", "az"])
    with handle:
        for s in sim.imu:
            writer.writerow([repr(s.t), *map(repr, s.gyro.tolist()), *map(repr, s.accel.tolist())])

    handle, writer = open_writer("camera.csv", ["t", "id", "u", "v"])
    with handle:
        for frame in sim.frames:
            for landmark_id, (u, v) in zip(frame.ids, frame.pixels):
                writer.writerow([repr(frame.t), landmark_id, repr(float(u)), repr(float(v))])

    handle, writer = open_writer("truth.csv", ["t"] + [f"R{i}{j}" for i in range(3) for j in range(3)]
                                 + ["vx", "vy", "vz", "px", "py", "pz", "bwx", "bwy", "bwz", "bax", "bay", "baz"])
    with handle:
        for k, state in enumerate(sim.truth):
            row = [state.R.ravel(), state.v, state.p, state.bw, state.ba]
            writer.writerow([repr(k / sim.world.imu_rate)] + [repr(float(x)) for x in np.concatenate(row)])

    handle, writer = open_writer("landmarks.csv", ["id", "x", "y", "z"])
    with handle:
        for landmark_id, f in enumerate(sim.world.landmarks):
            writer.writerow([landmark_id] + [repr(float(x)) for x in f])

    logger.info(f"Потоки симуляции сохранены в {directory}")
    return paths

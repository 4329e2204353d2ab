"""Линеаризация: непрерывные F, G, дискретные Phi, Q, накопление по окну ИНС и якобиан измерения H."""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from eqf.blocks import IMU_DIM, LowerBlockMatrix, flops
from eqf.charts import FilterVariant
from eqf.errors import BehindCameraError, NonFiniteJacobianError, NonMonotonicTimeError
from eqf.liegroups import skew
from eqf.transforms import hub_transform, transform_jacobians, transform_rate
from eqf.vins_model import GRAVITY, MIN_DEPTH, CameraModel, ImuSample, NoiseSpec, VinsState, flow

NOISE_DIM = 12
QUADRATURES = ("simpson", "trapezoid")


@dataclass(frozen=True)
class ProcessNoiseDensity:
    """Q_c = diag(s_w^2 I3, s_a^2 I3, s_ww^2 I3, s_wa^2 I3)."""

    sigma_gyro: float
    sigma_accel: float
    sigma_gyro_walk: float
    sigma_accel_walk: float

    @classmethod
    def from_noise(cls, noise: NoiseSpec) -> "ProcessNoiseDensity":
        return cls(noise.sigma_gyro, noise.sigma_accel, noise.sigma_gyro_walk, noise.sigma_accel_walk)

    def diagonal(self) -> np.ndarray:
        sigmas = (self.sigma_gyro, self.sigma_accel, self.sigma_gyro_walk, self.sigma_accel_walk)
        return np.repeat(np.square(sigmas), 3)

    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal())


@dataclass(frozen=True, eq=False)
class ContinuousJacobians:
    """F (блочная, (15+3m)^2) и G ((15+3m) x 12) в оценке при текущем входе."""

    F: LowerBlockMatrix
    G: np.ndarray

    @property
    def m(self) -> int:
        return self.F.m


@dataclass(frozen=True, eq=False)
class StructuredPhiQ:
    """
    Phi и Q на интервале в блочной форме.

    Args:
        phi: Матрица перехода [[Phi_I, 0], [Phi_FI, Phi_FF]].
        q_core: Блок Q ядра ИНС 15x15.
        q_cross: Блок Q_FI (3m x 15) или None, если он точно нулевой.
        q_landmark: Блок Q_FF (3m x 3m) или None.
    """

    phi: LowerBlockMatrix
    q_core: np.ndarray
    q_cross: Optional[np.ndarray] = None
    q_landmark: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.phi.m

    @property
    def has_landmark_terms(self) -> bool:
        return self.phi.coupling is not None or self.q_cross is not None or self.q_landmark is not None

    def dense_phi(self) -> np.ndarray:
        return self.phi.dense()

    def dense_q(self) -> np.ndarray:
        n = self.phi.dim
        Q = np.zeros((n, n))
        Q[:IMU_DIM, :IMU_DIM] = self.q_core
        if self.q_cross is not None:
            Q[IMU_DIM:, :IMU_DIM] = self.q_cross
            Q[:IMU_DIM, IMU_DIM:] = self.q_cross.T
        if self.q_landmark is not None:
            Q[IMU_DIM:, IMU_DIM:] = self.q_landmark
        return Q

    @classmethod
    def from_dense(cls, Phi: np.ndarray, Q: np.ndarray, m: int) -> "StructuredPhiQ":
        q_cross = Q[IMU_DIM:, :IMU_DIM].copy() if m and np.any(Q[IMU_DIM:, :IMU_DIM]) else None
        q_landmark = Q[IMU_DIM:, IMU_DIM:].copy() if m and np.any(Q[IMU_DIM:, IMU_DIM:]) else None
        return cls(LowerBlockMatrix.from_dense(Phi, m), Q[:IMU_DIM, :IMU_DIM].copy(), q_cross, q_landmark)


def _eskf_jacobians(xhat: VinsState, w: np.ndarray, a: np.ndarray) -> ContinuousJacobians:
    m = xhat.m
    R = xhat.R
    F = np.zeros((IMU_DIM, IMU_DIM))
    F[0:3, 0:3] = -skew(w)
    F[0:3, 9:12] = -np.eye(3)
    F[3:6, 0:3] = -R @ skew(a)
    F[3:6, 12:15] = -R
    F[6:9, 3:6] = np.eye(3)

    G = np.zeros((xhat.dim, NOISE_DIM))
    G[0:3, 0:3] = -np.eye(3)
    G[3:6, 3:6] = -R
    G[9:12, 6:9] = np.eye(3)
    G[12:15, 9:12] = np.eye(3)
    return ContinuousJacobians(LowerBlockMatrix(F, None, np.zeros((m, 3, 3)), m=m), G)


def _sd_core(xhat: VinsState, w: np.ndarray, a: np.ndarray) -> np.ndarray:
    R = xhat.R
    Rw = R @ w
    F = np.zeros((IMU_DIM, IMU_DIM))
    F[0:3, 9:12] = -np.eye(3)
    F[3:6, 0:3] = skew(GRAVITY)
    F[3:6, 12:15] = -np.eye(3)
    F[6:9, 3:6] = np.eye(3)
    F[6:9, 9:12] = -skew(xhat.p)
    F[9:12, 9:12] = skew(Rw)
    F[12:15, 9:12] = skew(R @ a + skew(xhat.v) @ Rw + GRAVITY)
    F[12:15, 12:15] = skew(Rw)
    return F


def _sd_noise(xhat: VinsState) -> np.ndarray:
    R = xhat.R
    vR = skew(xhat.v) @ R
    G = np.zeros((xhat.dim, NOISE_DIM))
    G[0:3, 0:3] = -R
    G[3:6, 0:3] = -vR
    G[3:6, 3:6] = -R
    G[6:9, 0:3] = -skew(xhat.p) @ R
    G[9:12, 6:9] = R
    G[12:15, 6:9] = vR
    G[12:15, 9:12] = R
    return G


def _sd_jacobians(xhat: VinsState, w: np.ndarray, a: np.ndarray, invariant: bool) -> ContinuousJacobians:
    m = xhat.m
    G = _sd_noise(xhat)
    coupling = None
    if invariant and m:
        # Строки ориентиров: -[f_i]x по столбцу смещения гироскопа
        coupling = np.zeros((3 * m, IMU_DIM))
        for i, f in enumerate(xhat.landmarks):
            coupling[3 * i:3 * i + 3, 9:12] = -skew(f)
            G[IMU_DIM + 3 * i:IMU_DIM + 3 * i + 3, 0:3] = -skew(f) @ xhat.R
    F = LowerBlockMatrix(_sd_core(xhat, w, a), coupling, np.zeros((m, 3, 3)), m=m)
    return ContinuousJacobians(F, G)


def _continuous(variant: FilterVariant, xhat: VinsState, gyro: np.ndarray, accel: np.ndarray) -> ContinuousJacobians:
    variant = FilterVariant(variant)
    w = gyro - xhat.bw
    a = accel - xhat.ba
    if variant is FilterVariant.ESKF:
        return _eskf_jacobians(xhat, w, a)
    if variant is FilterVariant.SD_EQF:
        return _sd_jacobians(xhat, w, a, invariant=False)
    if variant in (FilterVariant.ISD_EQF, FilterVariant.T_EQF):
        return _sd_jacobians(xhat, w, a, invariant=True)

    # RI-EKF и LI-EKF: перенос якобианов ESKF через T и ее производную по времени
    base = _eskf_jacobians(xhat, w, a)
    T = hub_transform(variant, xhat)
    T_dot = transform_rate(FilterVariant.ESKF, variant, xhat, gyro, accel)
    F_star, G_star, _ = transform_jacobians(T, T_dot, base.F, base.G)
    return ContinuousJacobians(F_star, G_star)


def continuous_F_G(variant: FilterVariant, xhat: VinsState, imu: ImuSample) -> ContinuousJacobians:
    """
    Непрерывные якобианы eps' = F eps + G n в оценке xhat.

    Args:
        variant: Вариант фильтра.
        xhat: Оценка.
        imu: Текущий отсчет ИНС.

    Returns:
        ContinuousJacobians.
    """
    return _continuous(variant, xhat, np.asarray(imu.gyro, dtype=float), np.asarray(imu.accel, dtype=float))


def _rk4_substep(
    F0: LowerBlockMatrix, Fm: LowerBlockMatrix, F1: LowerBlockMatrix, h: float, m: int
) -> LowerBlockMatrix:
    eye = LowerBlockMatrix.identity(m)
    k1 = F0
    k2 = Fm @ (eye + k1 * (0.5 * h))
    k3 = Fm @ (eye + k2 * (0.5 * h))
    k4 = F1 @ (eye + k3 * h)
    return eye + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)


def discrete_step(
    variant: FilterVariant,
    xhat: VinsState,
    imu: ImuSample,
    dt: float,
    noise: ProcessNoiseDensity,
    substeps: int = 4,
    quadrature: str = "simpson",
) -> StructuredPhiQ:
    """
    Phi и Q на одном интервале ИНС.

    Phi интегрируется методом Рунге-Кутты 4-го порядка по блочной ОДУ dPhi/dt = F Phi,
    Q получается квадратурой интеграла Phi G Q_c G^T Phi^T по узлам подшагов.

    Args:
        variant: Вариант фильтра.
        xhat: Оценка в начале интервала.
        imu: Отсчет ИНС, удерживаемый на интервале.
        dt: Длительность интервала, с.
        noise: Плотности шумов.
        substeps: Число подшагов Рунге-Кутты (четное для Симпсона).
        quadrature: "simpson" или "trapezoid".

    Returns:
        StructuredPhiQ для интервала.
    """
    if not dt > 0.0:
        raise NonMonotonicTimeError(f"Длительность интервала должна быть положительной, получено {dt}")
    if quadrature not in QUADRATURES:
        raise ValueError(f"Неизвестная квадратура: {quadrature}")
    if quadrature == "simpson" and substeps % 2:
        raise ValueError("Для квадратуры Симпсона нужно четное число подшагов")

    gyro = np.asarray(imu.gyro, dtype=float)
    accel = np.asarray(imu.accel, dtype=float)
    m = xhat.m
    h = dt / substeps

    # Узлы и середины подшагов вдоль потока оценки
    nodes = [_continuous(variant, flow(xhat, gyro, accel, 0.5 * k * h), gyro, accel) for k in range(2 * substeps + 1)]

    steps: List[LowerBlockMatrix] = []
    for j in range(substeps):
        steps.append(_rk4_substep(nodes[2 * j].F, nodes[2 * j + 1].F, nodes[2 * j + 2].F, h, m))

    # suffix[j] = Phi(t_end, tau_j)
    suffix: List[LowerBlockMatrix] = [LowerBlockMatrix.identity(m)] * (substeps + 1)
    for j in range(substeps - 1, -1, -1):
        suffix[j] = suffix[j + 1] @ steps[j]
    phi = suffix[0]

    if quadrature == "simpson":
        weights = np.array([1.0] + [4.0 if j % 2 else 2.0 for j in range(1, substeps)] + [1.0]) * (h / 3.0)
        node_ids = range(substeps + 1)
    else:
        weights = np.array([0.5 * dt, 0.5 * dt])
        node_ids = (0, substeps)

    qc = noise.diagonal()
    W = np.hstack([
        suffix[j].apply(nodes[2 * j].G) * np.sqrt(w * qc) for j, w in zip(node_ids, weights)
    ])
    q_core = W[:IMU_DIM] @ W[:IMU_DIM].T
    q_cross = q_landmark = None
    if m and np.any(W[IMU_DIM:]):
        q_cross = W[IMU_DIM:] @ W[:IMU_DIM].T
        q_landmark = W[IMU_DIM:] @ W[IMU_DIM:].T

    result = StructuredPhiQ(phi, q_core, q_cross, q_landmark)
    parts = [phi.core, q_core] + [x for x in (phi.coupling, phi.landmark, q_cross, q_landmark) if x is not None]
    if not all(np.all(np.isfinite(x)) for x in parts):
        raise NonFiniteJacobianError(f"Phi/Q для {FilterVariant(variant).value} содержат inf/nan")
    return result


def accumulate(steps: Sequence[StructuredPhiQ]) -> StructuredPhiQ:
    """
    Накопление Phi(t_k, t_0) и Q по окну ИНС.

    Если ни один шаг не связывает ориентиры с ядром, рекурсия выполняется только на блоках 15x15;
    иначе используется плотная рекурсия.

    Args:
        steps: Непустой список шагов в порядке времени.

    Returns:
        Накопленный StructuredPhiQ.
    """
    if not steps:
        raise ValueError("Пустой список шагов для накопления")
    if len(steps) == 1:
        return steps[0]

    m = steps[0].m
    if not any(step.has_landmark_terms for step in steps):
        phi = steps[0].phi
        q = steps[0].q_core
        for step in steps[1:]:
            A = step.phi.core
            q = flops.matmul(flops.matmul(A, q), A.T) + step.q_core
            phi = step.phi @ phi
        return StructuredPhiQ(phi, 0.5 * (q + q.T))

    Phi = steps[0].dense_phi()
    Q = steps[0].dense_q()
    for step in steps[1:]:
        P = step.dense_phi()
        Phi = flops.matmul(P, Phi)
        Q = flops.matmul(flops.matmul(P, Q), P.T) + step.dense_q()
    return StructuredPhiQ.from_dense(Phi, 0.5 * (Q + Q.T), m)


def eskf_measurement_rows(xhat: VinsState, landmark_id: int, camera: CameraModel) -> np.ndarray:
    """Строки H_ESKF (2 x (15+3m)) для одного ориентира."""
    i = xhat.landmark_index(landmark_id)
    Rt = xhat.R.T
    y = Rt @ (xhat.landmarks[i] - xhat.p)
    point = camera.to_camera(y)
    if point[2] <= MIN_DEPTH:
        raise BehindCameraError(f"Ориентир {landmark_id} за камерой: глубина {point[2]:.3f} м")
    J = camera.projection_jacobian(point) @ camera.rotation()
    rows = np.zeros((2, xhat.dim))
    rows[:, 0:3] = J @ skew(y)
    rows[:, 6:9] = -J @ Rt
    rows[:, IMU_DIM + 3 * i:IMU_DIM + 3 * i + 3] = J @ Rt
    return rows


def measurement_H(
    variant: FilterVariant, xhat: VinsState, ids: Sequence[int], camera: CameraModel
) -> np.ndarray:
    """
    Якобиан измерения (2k x (15+3m)) в координатах ошибки варианта.

    Args:
        variant: Вариант фильтра.
        xhat: Оценка.
        ids: Видимые ориентиры.
        camera: Модель камеры.

    Returns:
        Матрица H.
    """
    H = np.vstack([eskf_measurement_rows(xhat, i, camera) for i in ids]) if ids else np.zeros((0, xhat.dim))
    variant = FilterVariant(variant)
    if variant is FilterVariant.ESKF or not len(ids):
        return H
    return hub_transform(variant, xhat).inverse().rapply(H)

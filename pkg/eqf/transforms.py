"""Матрицы преобразования T между векторами ошибок разных вариантов фильтра.

Замкнутые формы строятся через узловой вариант ESKF: T_{a->b} = T_{E->b} T_{E->a}^-1.
Численный вариант дифференцирует chart_forward(b) o chart_inverse(a) в нуле.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from eqf.blocks import IMU_DIM, LowerBlockMatrix
from eqf.charts import FilterVariant, chart_forward, chart_inverse
from eqf.errors import DimensionMismatchError, NumericalFailureError
from eqf.liegroups import skew
from eqf.vins_model import VinsState, flow

NUMERIC_STEP = 1e-6
RATE_STEP = 1e-5

_ADJOINT_BIAS = (FilterVariant.SD_EQF, FilterVariant.ISD_EQF, FilterVariant.T_EQF)
_ROTATED_LANDMARKS = (FilterVariant.RI_EKF, FilterVariant.ISD_EQF)


@dataclass(frozen=True, eq=False)
class TransformMatrix:
    """
    Невырожденная матрица T: eps_target = T eps_source в первом порядке.

    Хранится в блочной форме [[A, 0], [L, D]]; теги структуры доступны через structure.
    """

    source: FilterVariant
    target: FilterVariant
    blocks: LowerBlockMatrix

    @property
    def m(self) -> int:
        return self.blocks.m

    @property
    def structure(self) -> Dict[str, object]:
        return self.blocks.structure()

    def dense(self) -> np.ndarray:
        return self.blocks.dense()

    def inverse(self) -> "TransformMatrix":
        return TransformMatrix(self.target, self.source, self.blocks.inverse())

    def __matmul__(self, other: Union["TransformMatrix", np.ndarray]) -> Union["TransformMatrix", np.ndarray]:
        if isinstance(other, TransformMatrix):
            if other.target != self.source:
                raise DimensionMismatchError(
                    f"Нельзя составить {other.source.value}->{other.target.value} и "
                    f"{self.source.value}->{self.target.value}"
                )
            return TransformMatrix(other.source, self.target, self.blocks @ other.blocks)
        return self.blocks @ other


def _eskf_to_nav_core(xhat: VinsState, adjoint_bias: bool) -> np.ndarray:
    R = xhat.R
    A = np.eye(IMU_DIM)
    A[0:3, 0:3] = R
    A[3:6, 0:3] = skew(xhat.v) @ R
    A[6:9, 0:3] = skew(xhat.p) @ R
    if adjoint_bias:
        A[9:12, 9:12] = R
        A[12:15, 9:12] = skew(xhat.v) @ R
        A[12:15, 12:15] = R
    return A


def _theta_coupling(xhat: VinsState, right: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
    """Столбец связи ориентиров с углом: [f_i]x (или [f_i]x R)."""
    if xhat.m == 0:
        return None
    L = np.zeros((3 * xhat.m, IMU_DIM))
    for i, f in enumerate(xhat.landmarks):
        block = skew(f)
        L[3 * i:3 * i + 3, 0:3] = block if right is None else block @ right
    return L


def hub_transform(variant: FilterVariant, xhat: VinsState) -> LowerBlockMatrix:
    """
    Замкнутая форма T_{ESKF -> variant} в оценке xhat.

    Args:
        variant: Целевой вариант.
        xhat: Оценка, в которой вычисляется матрица.

    Returns:
        Блочная матрица преобразования.
    """
    variant = FilterVariant(variant)
    m = xhat.m
    if variant is FilterVariant.ESKF:
        return LowerBlockMatrix.identity(m)

    if variant is FilterVariant.LI_EKF:
        Rt = xhat.R.T
        A = np.eye(IMU_DIM)
        A[3:6, 3:6] = Rt
        A[6:9, 6:9] = Rt
        landmark = np.broadcast_to(Rt, (m, 3, 3)).copy() if m else None
        return LowerBlockMatrix(A, None, landmark, m=m)

    if variant is FilterVariant.T_EQF:
        # Построение через карту SD-EqF, предкомпозированную с линейным отображением
        return direct_transform(FilterVariant.SD_EQF, FilterVariant.T_EQF, xhat) @ hub_transform(
            FilterVariant.SD_EQF, xhat
        )

    A = _eskf_to_nav_core(xhat, adjoint_bias=variant in _ADJOINT_BIAS)
    coupling = _theta_coupling(xhat, xhat.R) if variant in _ROTATED_LANDMARKS else None
    return LowerBlockMatrix(A, coupling, None, m=m)


_DIRECT_PAIRS: Tuple[Tuple[FilterVariant, FilterVariant], ...] = (
    (FilterVariant.SD_EQF, FilterVariant.T_EQF),
    (FilterVariant.SD_EQF, FilterVariant.ISD_EQF),
)


def direct_transform(source: FilterVariant, target: FilterVariant, xhat: VinsState) -> LowerBlockMatrix:
    """Прямые формы SD-EqF -> T-EqF и SD-EqF -> ISD-EqF: ядро I, связь [f_i]x по углу."""
    if (FilterVariant(source), FilterVariant(target)) not in _DIRECT_PAIRS:
        raise ValueError(f"Нет прямой формы для пары {source} -> {target}")
    return LowerBlockMatrix(np.eye(IMU_DIM), _theta_coupling(xhat), None, m=xhat.m)


def transform_via_hub(source: FilterVariant, target: FilterVariant, xhat: VinsState) -> TransformMatrix:
    source, target = FilterVariant(source), FilterVariant(target)
    blocks = hub_transform(target, xhat) @ hub_transform(source, xhat).inverse()
    return TransformMatrix(source, target, blocks)


def transform_closed_form(source: FilterVariant, target: FilterVariant, xhat: VinsState) -> TransformMatrix:
    """
    Матрица преобразования между двумя вариантами в замкнутой форме.

    Args:
        source: Исходный вариант.
        target: Целевой вариант.
        xhat: Оценка.

    Returns:
        TransformMatrix source -> target.
    """
    source, target = FilterVariant(source), FilterVariant(target)
    if source is target:
        return TransformMatrix(source, target, LowerBlockMatrix.identity(xhat.m))
    if source is FilterVariant.ESKF:
        return TransformMatrix(source, target, hub_transform(target, xhat))
    if (source, target) in _DIRECT_PAIRS:
        return TransformMatrix(source, target, direct_transform(source, target, xhat))
    if target is FilterVariant.ESKF:
        return TransformMatrix(source, target, hub_transform(source, xhat).inverse())
    return transform_via_hub(source, target, xhat)


def transform_numeric(
    source: FilterVariant, target: FilterVariant, xhat: VinsState, step: float = NUMERIC_STEP
) -> np.ndarray:
    """
    Центральные конечные разности chart_forward(target) o chart_inverse(source) в нуле.

    Args:
        source: Исходный вариант.
        target: Целевой вариант.
        xhat: Оценка.
        step: Шаг дифференцирования.

    Returns:
        Плотная матрица (15+3m)x(15+3m).
    """
    n = xhat.dim
    T = np.zeros((n, n))
    for j in range(n):
        delta = np.zeros(n)
        delta[j] = step
        plus = chart_forward(target, xhat, chart_inverse(source, xhat, delta))
        minus = chart_forward(target, xhat, chart_inverse(source, xhat, -delta))
        T[:, j] = (plus - minus) / (2.0 * step)

    if not np.all(np.isfinite(T)):
        raise NumericalFailureError(f"Численная матрица {source}->{target} содержит inf/nan")
    cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalFailureError(f"Численная матрица {source}->{target} вырождена (cond={cond:.3e})")
    return T


def transform_rate(
    source: FilterVariant,
    target: FilterVariant,
    xhat: VinsState,
    gyro: np.ndarray,
    accel: np.ndarray,
    step: float = RATE_STEP,
) -> LowerBlockMatrix:
    """Производная T(xhat(t)) вдоль потока оценки без шума, центральная разность по времени."""
    ahead = transform_closed_form(source, target, flow(xhat, gyro, accel, step)).blocks
    behind = transform_closed_form(source, target, flow(xhat, gyro, accel, -step)).blocks
    return (ahead - behind) * (0.5 / step)


MatrixLike = Union[LowerBlockMatrix, TransformMatrix, np.ndarray]


def _as_blocks(M: MatrixLike) -> Union[LowerBlockMatrix, np.ndarray]:
    return M.blocks if isinstance(M, TransformMatrix) else M


def transform_jacobians(
    T: MatrixLike,
    T_dot: MatrixLike,
    F: MatrixLike,
    G: np.ndarray,
    H: Optional[np.ndarray] = None,
) -> Tuple[MatrixLike, np.ndarray, Optional[np.ndarray]]:
    """
    Переносит линеаризацию в новые координаты ошибки.

    F* = T' T^-1 + T F T^-1, G* = T G, H* = H T^-1.

    Args:
        T: Матрица преобразования.
        T_dot: Ее производная по времени.
        F: Непрерывный якобиан динамики.
        G: Якобиан шума.
        H: Якобиан измерения (необязательно).

    Returns:
        Кортеж (F*, G*, H*).
    """
    T, T_dot, F = _as_blocks(T), _as_blocks(T_dot), _as_blocks(F)
    n = T.shape[0]
    if T_dot.shape != (n, n) or F.shape != (n, n) or G.shape[0] != n or (H is not None and H.shape[1] != n):
        raise DimensionMismatchError(f"Размерности T, F, G, H несовместимы с N={n}")

    if all(isinstance(M, LowerBlockMatrix) for M in (T, T_dot, F)):
        T_inv = T.inverse()
        F_star = T_dot @ T_inv + T @ F @ T_inv
        G_star = T.apply(G)
        H_star = None if H is None else T_inv.rapply(H)
        return F_star, G_star, H_star

    T_d = T.dense() if isinstance(T, LowerBlockMatrix) else T
    T_dot_d = T_dot.dense() if isinstance(T_dot, LowerBlockMatrix) else T_dot
    F_d = F.dense() if isinstance(F, LowerBlockMatrix) else F
    T_inv = np.linalg.inv(T_d)
    F_star = T_dot_d @ T_inv + T_d @ F_d @ T_inv
    H_star = None if H is None else H @ T_inv
    return F_star, T_d @ G, H_star

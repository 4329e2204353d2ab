"""Матричные группы Ли: SO(3), SE(3), SE2(3), SE_k(3) и полупрямые группы смещений.

Координаты se(3) упорядочены как (поворот; сдвиг), поэтому
Ad_(R, t) = [[R, 0], [[t]x R, R]].
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from eqf.errors import ChartDomainError, DimensionMismatchError

EXP_SERIES_THRESHOLD = 1e-8
JACOBIAN_SERIES_THRESHOLD = 1e-6
GAMMA2_SERIES_THRESHOLD = 1e-4
LOG_NEAR_PI = 1e-3
CHART_ANGLE_LIMIT = np.pi - 1e-6


def skew(w: np.ndarray) -> np.ndarray:
    """Кососимметричная матрица [w]x."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """
    Экспонента SO(3) по формуле Родрига.

    Args:
        w: Вектор ось-угол, рад.

    Returns:
        Матрица поворота exp([w]x).
    """
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < EXP_SERIES_THRESHOLD:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta**2) * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    """
    Главный логарифм SO(3), норма результата не превышает pi.

    Args:
        R: Матрица поворота.

    Returns:
        Вектор ось-угол.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * vee(R - R.T)
    sin_t = np.linalg.norm(s)
    cos_t = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arctan2(sin_t, cos_t)

    if theta < EXP_SERIES_THRESHOLD:
        return s * (1.0 + theta**2 / 6.0)

    if theta > np.pi - LOG_NEAR_PI:
        # Вблизи pi ось берется из симметричной части: n n^T
        B = (0.5 * (R + R.T) - cos_t * np.eye(3)) / (1.0 - cos_t)
        i = int(np.argmax(np.diag(B)))
        n = B[:, i] / np.sqrt(B[i, i])
        n /= np.linalg.norm(n)
        if n @ s < 0.0:
            n = -n
        return theta * n

    return (theta / sin_t) * s


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    """
    Левый якобиан SO(3): J_l = sum [w]x^n / (n+1)!.

    Args:
        w: Вектор ось-угол.

    Returns:
        Матрица 3x3.
    """
    w = np.asarray(w, dtype=float)
    t = np.linalg.norm(w)
    K = skew(w)
    if t < JACOBIAN_SERIES_THRESHOLD:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    return np.eye(3) + ((1.0 - np.cos(t)) / t**2) * K + ((t - np.sin(t)) / t**3) * K @ K


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    t = np.linalg.norm(w)
    K = skew(w)
    if t < JACOBIAN_SERIES_THRESHOLD:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    coeff = 1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t))
    return np.eye(3) - 0.5 * K + coeff * K @ K


def so3_gamma2(w: np.ndarray) -> np.ndarray:
    """
    Второй интеграл экспоненты: sum [w]x^n / (n+2)!.

    Нужен для точного интегрирования положения при кусочно-постоянном входе.
    """
    w = np.asarray(w, dtype=float)
    t = np.linalg.norm(w)
    K = skew(w)
    if t < GAMMA2_SERIES_THRESHOLD:
        return 0.5 * np.eye(3) + (1.0 / 6.0 - t**2 / 120.0) * K + (1.0 / 24.0 - t**2 / 720.0) * K @ K
    half = np.sin(0.5 * t)
    return (
        0.5 * np.eye(3)
        + ((t - np.sin(t)) / t**3) * K
        + ((t**2 - 4.0 * half**2) / (2.0 * t**4)) * K @ K
    )


def is_rotation(R: np.ndarray, tol: float = 1e-12) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0) and abs(np.linalg.det(R) - 1.0) <= tol)


def _checked_log(R: np.ndarray) -> np.ndarray:
    w = so3_log(R)
    angle = np.linalg.norm(w)
    if angle >= CHART_ANGLE_LIMIT:
        raise ChartDomainError(f"Угол поворота {angle:.9f} рад вне области карты (предел pi - 1e-6)")
    return w


def adjoint_se3(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """
    Сопряженное представление элемента SE(3) в координатах (поворот; сдвиг).

    Args:
        R: Поворот.
        t: Сдвиг.

    Returns:
        Матрица 6x6 [[R, 0], [[t]x R, R]].
    """
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[3:, 3:] = R
    Ad[3:, :3] = skew(t) @ R
    return Ad


def se3_inverse(R: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return R.T, -R.T @ t


@dataclass(frozen=True, eq=False)
class Se23Element:
    """Элемент SE2(3): поворот и два столбца (a, b)."""

    R: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def identity(cls) -> "Se23Element":
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    def compose(self, other: "Se23Element") -> "Se23Element":
        return Se23Element(self.R @ other.R, self.a + self.R @ other.a, self.b + self.R @ other.b)

    def __matmul__(self, other: "Se23Element") -> "Se23Element":
        return self.compose(other)

    def inverse(self) -> "Se23Element":
        Rt = self.R.T
        return Se23Element(Rt, -Rt @ self.a, -Rt @ self.b)

    def se3_part(self) -> Tuple[np.ndarray, np.ndarray]:
        """Гомоморфизм Gamma: SE2(3) -> SE(3), первый столбец."""
        return self.R, self.a

    def matrix(self) -> np.ndarray:
        M = np.eye(5)
        M[:3, :3] = self.R
        M[:3, 3] = self.a
        M[:3, 4] = self.b
        return M

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Se23Element":
        return cls(M[:3, :3].copy(), M[:3, 3].copy(), M[:3, 4].copy())


def se23_exp(u: np.ndarray) -> Se23Element:
    """
    Экспонента SE2(3), u = (поворот; a; b).

    Args:
        u: Вектор из 9 компонент.

    Returns:
        Элемент группы.
    """
    u = np.asarray(u, dtype=float)
    w = u[:3]
    J = so3_left_jacobian(w)
    return Se23Element(so3_exp(w), J @ u[3:6], J @ u[6:9])


def se23_log(E: Se23Element) -> np.ndarray:
    w = _checked_log(E.R)
    Jinv = so3_left_jacobian_inv(w)
    return np.concatenate([w, Jinv @ E.a, Jinv @ E.b])


@dataclass(frozen=True, eq=False)
class Sek3Element:
    """
    Элемент SE_k(3): поворот и k столбцов-сдвигов.

    Для SE_{2+m}(3) столбцы упорядочены как (v, p, f_1, ..., f_m).
    """

    R: np.ndarray
    cols: np.ndarray

    @property
    def k(self) -> int:
        return self.cols.shape[0]

    @classmethod
    def identity(cls, k: int) -> "Sek3Element":
        return cls(np.eye(3), np.zeros((k, 3)))

    def _check(self, other: "Sek3Element") -> None:
        if other.k != self.k:
            raise DimensionMismatchError(f"SE_k(3): k={self.k} и k={other.k} не совпадают")

    def compose(self, other: "Sek3Element") -> "Sek3Element":
        self._check(other)
        return Sek3Element(self.R @ other.R, self.cols + other.cols @ self.R.T)

    def __matmul__(self, other: "Sek3Element") -> "Sek3Element":
        return self.compose(other)

    def inverse(self) -> "Sek3Element":
        return Sek3Element(self.R.T, -self.cols @ self.R)

    def se3_part(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.R, self.cols[0]

    def matrix(self) -> np.ndarray:
        M = np.eye(3 + self.k)
        M[:3, :3] = self.R
        M[:3, 3:] = self.cols.T
        return M


def sek3_exp(u: np.ndarray) -> Sek3Element:
    u = np.asarray(u, dtype=float)
    w = u[:3]
    J = so3_left_jacobian(w)
    cols = u[3:].reshape(-1, 3) @ J.T
    return Sek3Element(so3_exp(w), cols)


def sek3_log(E: Sek3Element) -> np.ndarray:
    w = _checked_log(E.R)
    Jinv = so3_left_jacobian_inv(w)
    return np.concatenate([w, (E.cols @ Jinv.T).ravel()])


@dataclass(frozen=True, eq=False)
class SemiDirectBiasElement:
    """
    Элемент полупрямой группы смещений X = (C, gamma, p).

    Args:
        C: Элемент SE2(3).
        gamma: Координаты se(3), 6 компонент.
        p: Сдвиги ориентиров, 3m компонент.
    """

    C: Se23Element
    gamma: np.ndarray
    p: np.ndarray

    @property
    def m(self) -> int:
        return self.p.shape[0] // 3

    @classmethod
    def identity(cls, m: int = 0) -> "SemiDirectBiasElement":
        return cls(Se23Element.identity(), np.zeros(6), np.zeros(3 * m))

    def compose(self, other: "SemiDirectBiasElement") -> "SemiDirectBiasElement":
        return sdb_compose(self, other)

    def __matmul__(self, other: "SemiDirectBiasElement") -> "SemiDirectBiasElement":
        return sdb_compose(self, other)

    def inverse(self) -> "SemiDirectBiasElement":
        return sdb_inverse(self)


def sdb_compose(X1: SemiDirectBiasElement, X2: SemiDirectBiasElement) -> SemiDirectBiasElement:
    """X1 X2 = (C1 C2, gamma1 + Ad_Gamma(C1) gamma2, p1 + p2)."""
    if X1.m != X2.m:
        raise DimensionMismatchError(f"Число ориентиров не совпадает: {X1.m} и {X2.m}")
    Ad = adjoint_se3(*X1.C.se3_part())
    return SemiDirectBiasElement(X1.C @ X2.C, X1.gamma + Ad @ X2.gamma, X1.p + X2.p)


def sdb_inverse(X: SemiDirectBiasElement) -> SemiDirectBiasElement:
    C_inv = X.C.inverse()
    Ad = adjoint_se3(*C_inv.se3_part())
    return SemiDirectBiasElement(C_inv, -Ad @ X.gamma, -X.p)


@dataclass(frozen=True, eq=False)
class IsdBiasElement:
    """Элемент инвариантной полупрямой группы X = (B, gamma), B из SE_{2+m}(3)."""

    B: Sek3Element
    gamma: np.ndarray

    @property
    def m(self) -> int:
        return self.B.k - 2

    @classmethod
    def identity(cls, m: int = 0) -> "IsdBiasElement":
        return cls(Sek3Element.identity(2 + m), np.zeros(6))

    def compose(self, other: "IsdBiasElement") -> "IsdBiasElement":
        return isdb_compose(self, other)

    def __matmul__(self, other: "IsdBiasElement") -> "IsdBiasElement":
        return isdb_compose(self, other)

    def inverse(self) -> "IsdBiasElement":
        return isdb_inverse(self)


def isdb_compose(X1: IsdBiasElement, X2: IsdBiasElement) -> IsdBiasElement:
    if X1.m != X2.m:
        raise DimensionMismatchError(f"Число ориентиров не совпадает: {X1.m} и {X2.m}")
    Ad = adjoint_se3(*X1.B.se3_part())
    return IsdBiasElement(X1.B @ X2.B, X1.gamma + Ad @ X2.gamma)


def isdb_inverse(X: IsdBiasElement) -> IsdBiasElement:
    B_inv = X.B.inverse()
    Ad = adjoint_se3(*B_inv.se3_part())
    return IsdBiasElement(B_inv, -Ad @ X.gamma)

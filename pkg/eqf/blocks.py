"""Блочные нижнетреугольные матрицы [[A, 0], [L, D]] и счетчик FLOP.

A: ядро ИНС 15x15, L: связь ориентиров с ядром (3m x 15),
D: блочно-диагональная часть ориентиров (m блоков 3x3).
"""

from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from eqf.errors import DimensionMismatchError

IMU_DIM = 15
_EYE_CORE = np.eye(IMU_DIM)


class FlopCounter:
    """Счетчик операций блочных произведений по фазам (propagate, correct)."""

    def __init__(self) -> None:
        self.enabled = False
        self.phase = "other"
        self.counts: Dict[str, int] = {}

    def reset(self) -> None:
        self.counts = {}

    def add(self, rows: int, inner: int, cols: int) -> None:
        if self.enabled:
            self.counts[self.phase] = self.counts.get(self.phase, 0) + 2 * rows * inner * cols

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.enabled:
            cols = b.shape[1] if b.ndim == 2 else 1
            self.add(a.shape[0], a.shape[1], cols)
        return a @ b

    @contextmanager
    def counting(self, enabled: bool = True) -> Iterator[None]:
        """Включает подсчет на время блока; прежнее состояние восстанавливается."""
        previous = self.enabled
        self.enabled = previous or enabled
        try:
            yield
        finally:
            self.enabled = previous

    @contextmanager
    def scope(self, phase: str) -> Iterator[None]:
        previous = self.phase
        self.phase = phase
        try:
            yield
        finally:
            self.phase = previous


flops = FlopCounter()


def _block_cols(blocks: Tuple[int, ...]) -> np.ndarray:
    return np.concatenate([np.arange(3 * j, 3 * j + 3) for j in blocks])


def _blockdiag_apply(D: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Умножение блочно-диагональной D (m,3,3) слева на X (3m, k)."""
    m = D.shape[0]
    k = X.shape[1]
    flops.add(3 * m, 3, k)
    return np.einsum("iab,ibk->iak", D, X.reshape(m, 3, k)).reshape(3 * m, k)


def _blockdiag_rapply(X: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Умножение X (k, 3m) справа на блочно-диагональную D."""
    m = D.shape[0]
    k = X.shape[0]
    flops.add(k, 3, 3 * m)
    return np.einsum("kia,iab->kib", X.reshape(k, m, 3), D).reshape(k, 3 * m)


class LowerBlockMatrix:
    """
    Структурированная матрица размера (15+3m)x(15+3m).

    Args:
        core: Блок ИНС 15x15.
        coupling: Блок связи 3m x 15 или None (точный ноль).
        landmark: Блоки ориентиров (m, 3, 3) или None (единичные).
        m: Число ориентиров, если его нельзя вывести из блоков.
    """

    def __init__(
        self,
        core: np.ndarray,
        coupling: Optional[np.ndarray] = None,
        landmark: Optional[np.ndarray] = None,
        m: Optional[int] = None,
    ):
        if m is None:
            if coupling is not None:
                m = coupling.shape[0] // 3
            elif landmark is not None:
                m = landmark.shape[0]
            else:
                m = 0
        self.m = m
        self.core = np.asarray(core, dtype=float)
        self.landmark = None
        if landmark is not None and m > 0:
            landmark = np.asarray(landmark, dtype=float)
            if not np.array_equal(landmark, np.broadcast_to(np.eye(3), landmark.shape)):
                self.landmark = landmark

        self.coupling_blocks: Tuple[int, ...] = ()
        if coupling is not None and m > 0:
            coupling = np.asarray(coupling, dtype=float)
            self.coupling_blocks = tuple(
                j for j in range(IMU_DIM // 3) if np.any(coupling[:, 3 * j:3 * j + 3])
            )
        self.coupling = coupling if self.coupling_blocks else None
        self.core_is_identity = bool(np.array_equal(self.core, _EYE_CORE))

    @classmethod
    def identity(cls, m: int) -> "LowerBlockMatrix":
        return cls(np.eye(IMU_DIM), m=m)

    @classmethod
    def from_dense(cls, M: np.ndarray, m: int) -> "LowerBlockMatrix":
        """Выделяет блоки из плотной матрицы; верхний правый блок считается нулевым."""
        landmark = None
        if m > 0:
            landmark = np.stack([M[IMU_DIM + 3 * i:IMU_DIM + 3 * i + 3, IMU_DIM + 3 * i:IMU_DIM + 3 * i + 3]
                                 for i in range(m)])
        return cls(M[:IMU_DIM, :IMU_DIM].copy(), M[IMU_DIM:, :IMU_DIM].copy(), landmark, m=m)

    @property
    def dim(self) -> int:
        return IMU_DIM + 3 * self.m

    @property
    def shape(self) -> Tuple[int, int]:
        return self.dim, self.dim

    def structure(self) -> Dict[str, Union[bool, List[int], str]]:
        """Теги структуры: какие блоки являются точными нулями или единицами."""
        return {
            "core_identity": self.core_is_identity,
            "coupling_blocks": list(self.coupling_blocks),
            "landmark": "identity" if self.landmark is None else "general",
        }

    def landmark_blocks(self) -> np.ndarray:
        if self.landmark is None:
            return np.broadcast_to(np.eye(3), (self.m, 3, 3)).copy()
        return self.landmark

    def coupling_dense(self) -> np.ndarray:
        if self.coupling is None:
            return np.zeros((3 * self.m, IMU_DIM))
        return self.coupling

    def dense(self) -> np.ndarray:
        M = np.zeros(self.shape)
        M[:IMU_DIM, :IMU_DIM] = self.core
        if self.m:
            M[IMU_DIM:, :IMU_DIM] = self.coupling_dense()
            D = self.landmark_blocks()
            for i in range(self.m):
                s = IMU_DIM + 3 * i
                M[s:s + 3, s:s + 3] = D[i]
        return M

    def _check(self, m: int) -> None:
        if m != self.m:
            raise DimensionMismatchError(f"Блочные матрицы для m={self.m} и m={m} несовместимы")

    def _coupling_times(self, X_core: np.ndarray) -> Optional[np.ndarray]:
        """L @ X_core с учетом нулевых столбцовых блоков L."""
        if self.coupling is None:
            return None
        cols = _block_cols(self.coupling_blocks)
        return flops.matmul(self.coupling[:, cols], X_core[cols])

    def __matmul__(self, other: Union["LowerBlockMatrix", np.ndarray]) -> Union["LowerBlockMatrix", np.ndarray]:
        if isinstance(other, LowerBlockMatrix):
            return self._compose(other)
        return self.apply(np.asarray(other, dtype=float))

    def _compose(self, other: "LowerBlockMatrix") -> "LowerBlockMatrix":
        self._check(other.m)
        if self.core_is_identity:
            core = other.core.copy()
        elif other.core_is_identity:
            core = self.core.copy()
        else:
            core = flops.matmul(self.core, other.core)

        parts = []
        if self.coupling is not None:
            parts.append(self.coupling if other.core_is_identity else self._coupling_times(other.core))
        if other.coupling is not None:
            parts.append(other.coupling if self.landmark is None else _blockdiag_apply(self.landmark, other.coupling))
        coupling = sum(parts[1:], parts[0].copy()) if parts else None

        if self.landmark is None:
            landmark = other.landmark
        elif other.landmark is None:
            landmark = self.landmark
        else:
            flops.add(3 * self.m, 3, 3)
            landmark = np.einsum("iab,ibc->iac", self.landmark, other.landmark)
        return LowerBlockMatrix(core, coupling, landmark, m=self.m)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Произведение self @ X для плотной X с 15+3m строками."""
        vector = X.ndim == 1
        if vector:
            X = X[:, None]
        if X.shape[0] != self.dim:
            self._check((X.shape[0] - IMU_DIM) // 3)
        top = X[:IMU_DIM].copy() if self.core_is_identity else flops.matmul(self.core, X[:IMU_DIM])
        if self.m == 0:
            out = top
        else:
            bottom = X[IMU_DIM:].copy() if self.landmark is None else _blockdiag_apply(self.landmark, X[IMU_DIM:])
            coupled = self._coupling_times(X[:IMU_DIM])
            if coupled is not None:
                bottom += coupled
            out = np.vstack([top, bottom])
        return out[:, 0] if vector else out

    def rapply(self, X: np.ndarray) -> np.ndarray:
        """Произведение X @ self для плотной X с 15+3m столбцами."""
        vector = X.ndim == 1
        if vector:
            X = X[None, :]
        if X.shape[1] != self.dim:
            self._check((X.shape[1] - IMU_DIM) // 3)
        X_core = X[:, :IMU_DIM]
        left = X_core.copy() if self.core_is_identity else flops.matmul(X_core, self.core)
        if self.m == 0:
            out = left
        else:
            X_land = X[:, IMU_DIM:]
            if self.coupling is not None:
                cols = _block_cols(self.coupling_blocks)
                left[:, cols] += flops.matmul(X_land, self.coupling[:, cols])
            right = X_land.copy() if self.landmark is None else _blockdiag_rapply(X_land, self.landmark)
            out = np.hstack([left, right])
        return out[0] if vector else out

    def inverse(self) -> "LowerBlockMatrix":
        """Обращение блочной обратной подстановкой."""
        core_inv = np.eye(IMU_DIM) if self.core_is_identity else np.linalg.inv(self.core)
        if not self.core_is_identity:
            flops.add(IMU_DIM, IMU_DIM, IMU_DIM)
        landmark_inv = None
        if self.landmark is not None:
            flops.add(3 * self.m, 3, 3)
            landmark_inv = np.linalg.inv(self.landmark)
        coupling = None
        if self.coupling is not None:
            LA = self.coupling if self.core_is_identity else self._coupling_times(core_inv)
            coupling = -(LA if landmark_inv is None else _blockdiag_apply(landmark_inv, LA))
        return LowerBlockMatrix(core_inv, coupling, landmark_inv, m=self.m)

    def congruence(self, P: np.ndarray) -> np.ndarray:
        """self @ P @ self^T для симметричной P."""
        Y = self.apply(P)
        Z = self.apply(Y.T)
        return 0.5 * (Z + Z.T)

    def _combine(self, other: "LowerBlockMatrix", sign: float) -> "LowerBlockMatrix":
        self._check(other.m)
        core = self.core + sign * other.core
        coupling = self.coupling_dense() + sign * other.coupling_dense() if self.m else None
        landmark = self.landmark_blocks() + sign * other.landmark_blocks() if self.m else None
        return LowerBlockMatrix(core, coupling, landmark, m=self.m)

    def __add__(self, other: "LowerBlockMatrix") -> "LowerBlockMatrix":
        return self._combine(other, 1.0)

    def __sub__(self, other: "LowerBlockMatrix") -> "LowerBlockMatrix":
        return self._combine(other, -1.0)

    def __mul__(self, scalar: float) -> "LowerBlockMatrix":
        coupling = None if self.coupling is None else scalar * self.coupling
        landmark = scalar * self.landmark_blocks() if self.m else None
        return LowerBlockMatrix(scalar * self.core, coupling, landmark, m=self.m)

    __rmul__ = __mul__

    def is_finite(self) -> bool:
        parts = [self.core]
        if self.coupling is not None:
            parts.append(self.coupling)
        if self.landmark is not None:
            parts.append(self.landmark)
        return all(np.all(np.isfinite(x)) for x in parts)

"""Локальные карты phi = theta o phi_{X^-1} и их обращения для шести вариантов фильтра."""

from enum import Enum
from typing import List

import numpy as np

from eqf.errors import ChartDomainError, DimensionMismatchError
from eqf.liegroups import (
    CHART_ANGLE_LIMIT,
    Sek3Element,
    se23_exp,
    se23_log,
    sek3_exp,
    sek3_log,
    so3_exp,
    so3_log,
)
from eqf.vins_model import (
    VinsState,
    action_isd,
    action_sd,
    isd_element_from_state,
    sd_element_from_state,
)

THETA = slice(0, 3)
VEL = slice(3, 6)
POS = slice(6, 9)
BIAS_GYRO = slice(9, 12)
BIAS_ACCEL = slice(12, 15)
BIAS = slice(9, 15)
NAV = slice(0, 9)


class FilterVariant(str, Enum):
    """Варианты фильтра, различающиеся определением ошибки."""

    ESKF = "ESKF"
    SD_EQF = "SD_EQF"
    RI_EKF = "RI_EKF"
    LI_EKF = "LI_EKF"
    ISD_EQF = "ISD_EQF"
    T_EQF = "T_EQF"


def landmark_slice(i: int) -> slice:
    return slice(15 + 3 * i, 18 + 3 * i)


def error_dim(m: int) -> int:
    return 15 + 3 * m


def block_names(m: int) -> List[str]:
    return ["theta", "v", "p", "bw", "ba"] + [f"f{i}" for i in range(m)]


def _check_pair(xhat: VinsState, xi: VinsState) -> None:
    if xhat.ids != xi.ids:
        raise DimensionMismatchError(f"Ориентиры оценки {xhat.ids} и состояния {xi.ids} не совпадают")


def _check_error(xhat: VinsState, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (xhat.dim,):
        raise DimensionMismatchError(f"Ожидался вектор ошибки длины {xhat.dim}, получено {eps.shape}")
    if np.linalg.norm(eps[THETA]) >= CHART_ANGLE_LIMIT:
        raise ChartDomainError(f"Угловая ошибка {np.linalg.norm(eps[THETA]):.6f} рад вне области карты")
    return eps


def _state_from_extended(template: VinsState, E: Sek3Element, bias: np.ndarray) -> VinsState:
    return VinsState(E.R, E.cols[0], E.cols[1], bias[:3], bias[3:], E.cols[2:], template.ids)


def _extended_log_to_error(u: np.ndarray, bias_error: np.ndarray) -> np.ndarray:
    return np.concatenate([u[:9], bias_error, u[9:]])


def _error_to_extended_log(eps: np.ndarray) -> np.ndarray:
    return np.concatenate([eps[NAV], eps[15:]])


def _landmark_rotation_term(xhat: VinsState, theta: np.ndarray) -> np.ndarray:
    """Слагаемые [f_i]x theta для всех ориентиров оценки."""
    return np.cross(xhat.landmarks, theta).ravel()


def chart_forward(variant: FilterVariant, xhat: VinsState, xi: VinsState) -> np.ndarray:
    """
    Переводит истинное состояние в вектор ошибки выбранного варианта.

    Args:
        variant: Вариант фильтра.
        xhat: Текущая оценка.
        xi: Состояние в окрестности оценки.

    Returns:
        Вектор ошибки длины 15+3m.
    """
    _check_pair(xhat, xi)
    variant = FilterVariant(variant)

    if variant is FilterVariant.ESKF:
        theta = so3_log(xhat.R.T @ xi.R)
        if np.linalg.norm(theta) >= CHART_ANGLE_LIMIT:
            raise ChartDomainError(f"Угол ошибки {np.linalg.norm(theta):.9f} рад вне области карты")
        return np.concatenate([
            theta, xi.v - xhat.v, xi.p - xhat.p, xi.bias - xhat.bias, (xi.landmarks - xhat.landmarks).ravel(),
        ])

    if variant in (FilterVariant.SD_EQF, FilterVariant.T_EQF):
        e = action_sd(sd_element_from_state(xhat).inverse(), xi)
        eps = np.concatenate([se23_log(e.nav), e.bias, e.landmarks.ravel()])
        if variant is FilterVariant.T_EQF and xhat.m:
            eps[15:] += _landmark_rotation_term(xhat, eps[THETA])
        return eps

    if variant is FilterVariant.ISD_EQF:
        e = action_isd(isd_element_from_state(xhat).inverse(), xi)
        return _extended_log_to_error(sek3_log(e.extended_pose), e.bias)

    if variant is FilterVariant.RI_EKF:
        E = xi.extended_pose @ xhat.extended_pose.inverse()
        return _extended_log_to_error(sek3_log(E), xi.bias - xhat.bias)

    E = xhat.extended_pose.inverse() @ xi.extended_pose
    return _extended_log_to_error(sek3_log(E), xi.bias - xhat.bias)


def chart_inverse(variant: FilterVariant, xhat: VinsState, eps: np.ndarray) -> VinsState:
    """
    Восстанавливает состояние по вектору ошибки (ретракция оценки).

    Args:
        variant: Вариант фильтра.
        xhat: Текущая оценка.
        eps: Вектор ошибки.

    Returns:
        Состояние phi^-1(eps).
    """
    eps = _check_error(xhat, eps)
    variant = FilterVariant(variant)

    if variant is FilterVariant.ESKF:
        return VinsState(
            xhat.R @ so3_exp(eps[THETA]),
            xhat.v + eps[VEL],
            xhat.p + eps[POS],
            xhat.bw + eps[BIAS_GYRO],
            xhat.ba + eps[BIAS_ACCEL],
            xhat.landmarks + eps[15:].reshape(-1, 3),
            xhat.ids,
        )

    if variant in (FilterVariant.SD_EQF, FilterVariant.T_EQF):
        eps = eps.copy()
        if variant is FilterVariant.T_EQF and xhat.m:
            eps[15:] -= _landmark_rotation_term(xhat, eps[THETA])
        nav = se23_exp(eps[NAV])
        bias = eps[BIAS]
        e = VinsState(nav.R, nav.a, nav.b, bias[:3], bias[3:], eps[15:].reshape(-1, 3), xhat.ids)
        return action_sd(sd_element_from_state(xhat), e)

    u = _error_to_extended_log(eps)
    if variant is FilterVariant.ISD_EQF:
        e = _state_from_extended(xhat, sek3_exp(u), eps[BIAS])
        return action_isd(isd_element_from_state(xhat), e)

    if variant is FilterVariant.RI_EKF:
        E = sek3_exp(u) @ xhat.extended_pose
    else:
        E = xhat.extended_pose @ sek3_exp(u)
    return _state_from_extended(xhat, E, xhat.bias + eps[BIAS])

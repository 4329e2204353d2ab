"""Проверки эквивалентности для подкоманды verify."""

from itertools import permutations
from typing import Dict, List

import numpy as np

from eqf.blocks import LowerBlockMatrix
from eqf.charts import FilterVariant, chart_forward, chart_inverse
from eqf.filters import Strategy
from eqf.jacobians import ProcessNoiseDensity, continuous_F_G, discrete_step, measurement_H
from eqf.observability import (
    STATE_INDEPENDENT_VARIANTS,
    UNOBSERVABLE_DIM,
    analytic_basis,
    excitation_trajectory,
    principal_angle,
    state_independence_report,
    transform_basis,
    variant_report,
)
from eqf.transforms import (
    direct_transform,
    transform_closed_form,
    transform_jacobians,
    transform_numeric,
    transform_rate,
)
from eqf.vins_model import ImuSample, VinsState, measure, propagate_mean, random_state
from experiments.metrics import nees_value
from experiments.runner import run_filter, simulate_run
from tools.check_manager import CheckOutcome
from utils.config import ExperimentConfig
from utils.logger import setup_logger

logger = setup_logger("tools.checks")

VARIANTS = list(FilterVariant)
TRANSITIVITY_TOLERANCE = 1e-10
JACOBIAN_TOLERANCE = 1e-5
DISCRETE_TOLERANCE = 1e-8
ROUNDTRIP_TOLERANCE = 1e-9
BASIS_RESIDUAL_TOLERANCE = 1e-6
ANGLE_TOLERANCE = 1e-8
NEES_TOLERANCE = 1e-10
MEASUREMENT_STEP = 1e-6


def _dense(M) -> np.ndarray:
    return M.dense() if isinstance(M, LowerBlockMatrix) else np.asarray(M)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _random_imu(rng: np.random.Generator) -> ImuSample:
    return ImuSample(0.0, 0.5 * rng.standard_normal(3), np.array([0.0, 0.0, 9.81]) + rng.standard_normal(3))


def numeric_measurement_H(
    variant: FilterVariant, xhat: VinsState, ids: List[int], camera, step: float = MEASUREMENT_STEP
) -> np.ndarray:
    """Центральные разности measure o chart_inverse по координатам ошибки варианта."""
    H = np.zeros((2 * len(ids), xhat.dim))
    for j in range(xhat.dim):
        delta = np.zeros(xhat.dim)
        delta[j] = step
        plus = chart_inverse(variant, xhat, delta)
        minus = chart_inverse(variant, xhat, -delta)
        H[:, j] = np.concatenate([measure(plus, i, camera) - measure(minus, i, camera) for i in ids]) / (2.0 * step)
    return H


class VerificationChecks:
    """Набор проверок; каждый метод check_* возвращает CheckOutcome."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.settings = config.verify

    def _states(self, count: int = 0, m: int = -1) -> List[VinsState]:
        rng = np.random.default_rng(self.config.seed)
        m = self.settings.landmarks if m < 0 else m
        return [random_state(rng, m) for _ in range(count or self.settings.random_states)]

    def check_transform_closed_vs_numeric(self) -> CheckOutcome:
        """Замкнутые формы T совпадают с конечными разностями для всех 30 упорядоченных пар вариантов."""
        tol = self.settings.transform_tolerance
        worst = 0.0
        per_pair: Dict[str, float] = {}
        for xhat in self._states():
            for source, target in permutations(VARIANTS, 2):
                closed = transform_closed_form(source, target, xhat).dense()
                numeric = transform_numeric(source, target, xhat)
                err = float(np.max(np.abs(closed - numeric)))
                key = f"{source.value}->{target.value}"
                per_pair[key] = max(per_pair.get(key, 0.0), err)
                worst = max(worst, err)
        return CheckOutcome(worst < tol, worst, tol, per_pair)

    def check_transform_transitivity(self) -> CheckOutcome:
        """Транзитивность замкнутых форм: T_ac = T_bc T_ab."""
        worst = 0.0
        for xhat in self._states(count=3):
            for a, b, c in permutations(VARIANTS, 3):
                T_ac = transform_closed_form(a, c, xhat).dense()
                T_bc_ab = transform_closed_form(b, c, xhat).dense() @ transform_closed_form(a, b, xhat).dense()
                worst = max(worst, float(np.linalg.norm(T_ac - T_bc_ab) / max(1.0, np.linalg.norm(T_ac))))
        return CheckOutcome(worst < TRANSITIVITY_TOLERANCE, worst, TRANSITIVITY_TOLERANCE)

    def check_jacobian_transfer(self) -> CheckOutcome:
        """F, G и H, перенесенные из ESKF через T, совпадают с аналитическими формами SD-EqF и T-EqF."""
        rng = np.random.default_rng(self.config.seed + 1)
        camera = self.config.camera
        details: Dict[str, float] = {}
        worst = 0.0
        for xhat in self._states(count=3):
            imu = _random_imu(rng)
            base = continuous_F_G(FilterVariant.ESKF, xhat, imu)
            H_eskf = measurement_H(FilterVariant.ESKF, xhat, list(xhat.ids), camera)
            for variant in (FilterVariant.SD_EQF, FilterVariant.T_EQF):
                T = transform_closed_form(FilterVariant.ESKF, variant, xhat)
                T_dot = transform_rate(FilterVariant.ESKF, variant, xhat, imu.gyro, imu.accel)
                F_star, G_star, H_star = transform_jacobians(T, T_dot, base.F, base.G, H_eskf)
                analytic = continuous_F_G(variant, xhat, imu)

                F_a = _dense(analytic.F)
                err_F = float(np.max(np.abs(_dense(F_star) - F_a)) / max(1.0, np.max(np.abs(F_a))))
                # Знаки столбцов шума не фиксированы, сравниваются G G^T
                GG = analytic.G @ analytic.G.T
                err_G = float(np.max(np.abs(G_star @ G_star.T - GG)) / max(1.0, np.max(np.abs(GG))))
                H_num = numeric_measurement_H(variant, xhat, list(xhat.ids), camera)
                err_H = float(np.max(np.abs(H_star - H_num)) / max(1.0, np.max(np.abs(H_num))))

                for name, err in (("F", err_F), ("G", err_G), ("H", err_H)):
                    key = f"{variant.value}.{name}"
                    details[key] = max(details.get(key, 0.0), err)
                    worst = max(worst, err)
        return CheckOutcome(worst < JACOBIAN_TOLERANCE, worst, JACOBIAN_TOLERANCE, details)

    def check_discrete_law(self) -> CheckOutcome:
        """Дискретные Phi и Q T-EqF и ISD-EqF получаются из SD-EqF через T на каждом шаге."""
        rng = np.random.default_rng(self.config.seed + 2)
        noise = ProcessNoiseDensity.from_noise(self.config.noise)
        dt = 1.0 / self.config.world.imu_rate
        details: Dict[str, float] = {}
        worst = 0.0
        for x0 in self._states(count=3):
            imu = _random_imu(rng)
            x1 = propagate_mean(x0, imu, dt)
            aux = discrete_step(FilterVariant.SD_EQF, x0, imu, dt, noise)
            for target in (FilterVariant.T_EQF, FilterVariant.ISD_EQF):
                step = discrete_step(target, x0, imu, dt, noise)
                T0 = direct_transform(FilterVariant.SD_EQF, target, x0)
                T1 = direct_transform(FilterVariant.SD_EQF, target, x1)
                phi = (T1 @ aux.phi @ T0.inverse()).dense()
                Q = T1.congruence(aux.dense_q())
                err = max(_relative(step.dense_phi(), phi), _relative(step.dense_q(), Q))
                details[target.value] = max(details.get(target.value, 0.0), err)
                worst = max(worst, err)
        return CheckOutcome(worst < DISCRETE_TOLERANCE, worst, DISCRETE_TOLERANCE, details)

    def check_chart_roundtrip(self) -> CheckOutcome:
        """chart_forward(chart_inverse(eps)) = eps и chart_forward(x, x) = 0 для всех вариантов."""
        rng = np.random.default_rng(self.config.seed + 3)
        worst = 0.0
        for xhat in self._states():
            for variant in VARIANTS:
                eps = 0.1 * rng.standard_normal(xhat.dim)
                back = chart_forward(variant, xhat, chart_inverse(variant, xhat, eps))
                worst = max(worst, float(np.max(np.abs(back - eps))), float(np.max(np.abs(
                    chart_forward(variant, xhat, xhat)
                ))))
        return CheckOutcome(worst < ROUNDTRIP_TOLERANCE, worst, ROUNDTRIP_TOLERANCE)

    def _excitation(self):
        section = self.config.observability
        states, samples, t_end = excitation_trajectory(
            section.landmarks, section.duration, section.imu_rate, seed=self.config.seed
        )
        frames = list(range(0, len(states), section.frame_every))
        return states, samples, t_end, frames

    def check_observability_nullspace(self) -> CheckOutcome:
        """Ядро идеального стека наблюдаемости четырехмерно и содержит аналитический базис каждого варианта."""
        states, samples, t_end, frames = self._excitation()
        tol = self.config.observability.tolerance
        worst = 0.0
        passed = True
        details: Dict[str, float] = {}
        for variant in VARIANTS:
            report = variant_report(variant, states, samples, t_end, frames, self.config.camera, tol)
            details[f"{variant.value}.nullspace_dim"] = report.nullspace_dim
            details[f"{variant.value}.basis_residual"] = report.basis_residual
            passed &= report.nullspace_dim == UNOBSERVABLE_DIM
            worst = max(worst, report.basis_residual)
        return CheckOutcome(passed and worst < BASIS_RESIDUAL_TOLERANCE, worst, BASIS_RESIDUAL_TOLERANCE, details)

    def check_basis_transform(self) -> CheckOutcome:
        """T N_ESKF натягивает аналитический базис целевого варианта."""
        worst = 0.0
        for xhat in self._states():
            N_eskf = analytic_basis(FilterVariant.ESKF, xhat)
            for variant in VARIANTS:
                mapped = transform_basis(transform_closed_form(FilterVariant.ESKF, variant, xhat), N_eskf)
                worst = max(worst, principal_angle(mapped, analytic_basis(variant, xhat).matrix))
        return CheckOutcome(worst < ANGLE_TOLERANCE, worst, ANGLE_TOLERANCE)

    def check_state_independence(self) -> CheckOutcome:
        """Базисы RI-EKF, ISD-EqF и T-EqF побитово не зависят от оценки; у остальных столбец рыскания зависит."""
        states = self._states(count=4)
        details: Dict[str, float] = {}
        passed = True
        smallest_dependent = np.inf
        for variant in VARIANTS:
            angles = []
            for x1, x2 in zip(states[::2], states[1::2]):
                report = state_independence_report(variant, x1, x2)
                if variant in STATE_INDEPENDENT_VARIANTS:
                    passed &= report.bitwise_equal
                else:
                    passed &= not report.independent
                    smallest_dependent = min(smallest_dependent, report.angle)
                angles.append(report.angle)
            details[variant.value] = max(angles)
        return CheckOutcome(bool(passed), float(smallest_dependent), ANGLE_TOLERANCE, details)

    def check_nees_invariance(self) -> CheckOutcome:
        """NEES полного состояния не меняется при переносе ошибки и ковариации через T."""
        rng = np.random.default_rng(self.config.seed + 4)
        worst = 0.0
        for xhat in self._states():
            n = xhat.dim
            A = rng.standard_normal((n, n))
            P = 0.01 * (A @ A.T / n + np.eye(n))
            eps = rng.multivariate_normal(np.zeros(n), P)
            base = nees_value(eps, P)
            for variant in VARIANTS:
                T = transform_closed_form(FilterVariant.ESKF, variant, xhat).blocks
                value = nees_value(T.dense() @ eps, T.congruence(P))
                worst = max(worst, abs(value - base) / base)
        return CheckOutcome(worst < NEES_TOLERANCE, worst, NEES_TOLERANCE)

    def check_strategy_equivalence(self) -> CheckOutcome:
        """Naive, TP и TC для T-EqF дают одинаковые оценки и ковариации на коротком прогоне."""
        tol = self.settings.strategy_tolerance
        trajectory = self.config.trajectory.model_copy(update={"duration": self.settings.duration})
        config = self.config.model_copy(update={"trajectory": trajectory})
        sim = simulate_run(config, 0)

        records = {s: run_filter(config, FilterVariant.T_EQF, s, sim=sim) for s in Strategy}
        reference = records[Strategy.NAIVE]
        details: Dict[str, float] = {}
        worst = 0.0
        for strategy in (Strategy.TP, Strategy.TC):
            record = records[strategy]
            mean_err = max(
                float(np.max(np.abs(record.est_p - reference.est_p))),
                float(np.max(np.abs(record.est_v - reference.est_v))),
                float(np.max(np.abs(record.est_R - reference.est_R))),
            )
            cov_err = max(_relative(a, b) for a, b in zip(record.P_core, reference.P_core))
            details[f"{strategy.value}.mean"] = mean_err
            details[f"{strategy.value}.covariance"] = cov_err
            worst = max(worst, mean_err, cov_err)
        logger.debug(f"Эквивалентность реализаций на {len(sim.frames)} кадрах: {details}")
        return CheckOutcome(worst < tol, worst, tol, details)

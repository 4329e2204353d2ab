import numpy as np
import pytest

from eqf.blocks import IMU_DIM
from eqf.charts import FilterVariant, chart_forward, chart_inverse
from eqf.errors import BehindCameraError, NonMonotonicTimeError
from eqf.jacobians import (
    ProcessNoiseDensity,
    StructuredPhiQ,
    accumulate,
    continuous_F_G,
    discrete_step,
    measurement_H,
)
from eqf.transforms import direct_transform, transform_closed_form, transform_jacobians, transform_rate
from eqf.vins_model import CameraModel, ImuSample, flow, measure, propagate_mean, state_origin

NOISE = ProcessNoiseDensity(1.7e-4, 2.0e-3, 2.0e-5, 3.0e-3)
IMU = ImuSample(0.0, np.array([0.2, -0.1, 0.3]), np.array([0.4, -0.2, 9.5]))


def _numeric_F(variant: FilterVariant, xhat, imu: ImuSample, h: float = 1e-3, dt: float = 1e-4) -> np.ndarray:
    """Производная ошибки по времени вдоль потока оценки и возмущенного состояния."""
    n = xhat.dim
    ahead = flow(xhat, imu.gyro, imu.accel, dt)
    behind = flow(xhat, imu.gyro, imu.accel, -dt)

    def rate(delta: np.ndarray) -> np.ndarray:
        xi = chart_inverse(variant, xhat, delta)
        plus = chart_forward(variant, ahead, flow(xi, imu.gyro, imu.accel, dt))
        minus = chart_forward(variant, behind, flow(xi, imu.gyro, imu.accel, -dt))
        return (plus - minus) / (2.0 * dt)

    F = np.zeros((n, n))
    for j in range(n):
        delta = np.zeros(n)
        delta[j] = h
        F[:, j] = (rate(delta) - rate(-delta)) / (2.0 * h)
    return F


@pytest.mark.parametrize("variant", list(FilterVariant), ids=lambda v: v.value)
def test_continuous_F_matches_error_dynamics(variant, state) -> None:
    F = continuous_F_G(variant, state, IMU).F.dense()
    F_num = _numeric_F(variant, state, IMU)
    assert np.max(np.abs(F - F_num)) < 1e-3 * max(1.0, np.max(np.abs(F)))


@pytest.mark.parametrize("variant", [FilterVariant.SD_EQF, FilterVariant.T_EQF])
def test_transfer_from_eskf_matches_analytic(variant, state) -> None:
    base = continuous_F_G(FilterVariant.ESKF, state, IMU)
    T = transform_closed_form(FilterVariant.ESKF, variant, state)
    T_dot = transform_rate(FilterVariant.ESKF, variant, state, IMU.gyro, IMU.accel)
    F_star, G_star, _ = transform_jacobians(T, T_dot, base.F, base.G)
    analytic = continuous_F_G(variant, state, IMU)
    np.testing.assert_allclose(F_star.dense(), analytic.F.dense(), atol=1e-5)
    np.testing.assert_allclose(G_star @ G_star.T, analytic.G @ analytic.G.T, atol=1e-5)


@pytest.mark.parametrize("variant", [FilterVariant.SD_EQF, FilterVariant.ISD_EQF, FilterVariant.T_EQF],
                         ids=lambda v: v.value)
def test_rotation_about_gravity_in_kernel_of_equivariant_F(variant, state) -> None:
    F = continuous_F_G(variant, state, IMU).F.dense()
    N = np.zeros(state.dim)
    N[0:3] = [0.0, 0.0, 9.81]
    np.testing.assert_allclose(F @ N, 0.0, atol=1e-12)


@pytest.mark.parametrize("variant", list(FilterVariant), ids=lambda v: v.value)
def test_measurement_H_matches_finite_difference(variant, state) -> None:
    camera = CameraModel()
    ids = list(state.ids)
    H = measurement_H(variant, state, ids, camera)
    h = 1e-6
    H_num = np.zeros_like(H)
    for j in range(state.dim):
        delta = np.zeros(state.dim)
        delta[j] = h
        plus = np.concatenate([measure(chart_inverse(variant, state, delta), i, camera) for i in ids])
        minus = np.concatenate([measure(chart_inverse(variant, state, -delta), i, camera) for i in ids])
        H_num[:, j] = (plus - minus) / (2.0 * h)
    assert np.max(np.abs(H - H_num)) < 1e-5 * np.max(np.abs(H))


def test_measurement_H_behind_camera_raises() -> None:
    xi = state_origin(1).with_landmarks(np.array([[0.0, 0.0, -2.0]]))
    with pytest.raises(BehindCameraError):
        measurement_H(FilterVariant.ESKF, xi, [0], CameraModel())


def test_measurement_H_without_observations(state) -> None:
    assert measurement_H(FilterVariant.T_EQF, state, [], CameraModel()).shape == (0, state.dim)


def test_discrete_step_rejects_nonpositive_dt(state) -> None:
    with pytest.raises(NonMonotonicTimeError):
        discrete_step(FilterVariant.SD_EQF, state, IMU, 0.0, NOISE)


def test_discrete_step_rejects_odd_simpson_substeps(state) -> None:
    with pytest.raises(ValueError):
        discrete_step(FilterVariant.SD_EQF, state, IMU, 0.005, NOISE, substeps=3)


@pytest.mark.parametrize("variant", list(FilterVariant), ids=lambda v: v.value)
def test_discrete_step_vanishing_interval(variant, state) -> None:
    dt = 1e-9
    step = discrete_step(variant, state, IMU, dt, NOISE)
    F = continuous_F_G(variant, state, IMU).F.dense()
    Phi = step.dense_phi()
    eye = np.eye(state.dim)
    assert np.max(np.abs(Phi - eye)) < 1e-7
    np.testing.assert_allclose(Phi, eye + F * dt, rtol=0.0, atol=1e-14)
    assert np.max(np.abs(step.dense_q())) < 1e-8


def test_discrete_phi_matches_finite_difference_of_flow(state) -> None:
    dt = 0.005
    step = discrete_step(FilterVariant.ESKF, state, IMU, dt, NOISE)
    end = propagate_mean(state, IMU, dt)
    h = 1e-6
    Phi_num = np.zeros((state.dim, state.dim))
    for j in range(state.dim):
        delta = np.zeros(state.dim)
        delta[j] = h
        plus = chart_forward(FilterVariant.ESKF, end, propagate_mean(chart_inverse(FilterVariant.ESKF, state, delta),
                                                                     IMU, dt))
        minus = chart_forward(FilterVariant.ESKF, end, propagate_mean(chart_inverse(FilterVariant.ESKF, state, -delta),
                                                                      IMU, dt))
        Phi_num[:, j] = (plus - minus) / (2.0 * h)
    np.testing.assert_allclose(step.dense_phi(), Phi_num, atol=1e-6)


def test_discrete_law_sd_to_t(state) -> None:
    dt = 0.005
    aux = discrete_step(FilterVariant.SD_EQF, state, IMU, dt, NOISE)
    target = discrete_step(FilterVariant.T_EQF, state, IMU, dt, NOISE)
    T0 = direct_transform(FilterVariant.SD_EQF, FilterVariant.T_EQF, state)
    T1 = direct_transform(FilterVariant.SD_EQF, FilterVariant.T_EQF, propagate_mean(state, IMU, dt))
    phi = (T1 @ aux.phi @ T0.inverse()).dense()
    np.testing.assert_allclose(target.dense_phi(), phi, rtol=0.0, atol=1e-8 * np.max(np.abs(phi)))
    np.testing.assert_allclose(target.dense_q(), T1.congruence(aux.dense_q()),
                               rtol=0.0, atol=1e-8 * np.max(np.abs(target.dense_q())))


def test_q_is_symmetric_psd(state) -> None:
    step = discrete_step(FilterVariant.T_EQF, state, IMU, 0.005, NOISE)
    Q = step.dense_q()
    np.testing.assert_allclose(Q, Q.T, rtol=0.0, atol=1e-12 * np.max(np.abs(Q)))
    assert np.min(np.linalg.eigvalsh(Q)) > -1e-15


def test_simpson_and_trapezoid_agree_to_leading_order(state) -> None:
    simpson = discrete_step(FilterVariant.SD_EQF, state, IMU, 0.005, NOISE).dense_q()
    trapezoid = discrete_step(FilterVariant.SD_EQF, state, IMU, 0.005, NOISE, quadrature="trapezoid").dense_q()
    np.testing.assert_allclose(simpson[:9, :9], trapezoid[:9, :9], rtol=0.0,
                               atol=0.05 * np.max(np.abs(simpson[:9, :9])))


def test_sd_steps_without_landmark_terms_use_block_accumulation(state) -> None:
    steps = []
    x = state
    for _ in range(5):
        steps.append(discrete_step(FilterVariant.SD_EQF, x, IMU, 0.005, NOISE))
        x = propagate_mean(x, IMU, 0.005)
    assert not any(s.has_landmark_terms for s in steps)

    total = accumulate(steps)
    Phi = np.eye(state.dim)
    Q = np.zeros((state.dim, state.dim))
    for s in steps:
        Phi = s.dense_phi() @ Phi
        Q = s.dense_phi() @ Q @ s.dense_phi().T + s.dense_q()
    np.testing.assert_allclose(total.dense_phi(), Phi, atol=1e-12)
    np.testing.assert_allclose(total.dense_q(), Q, atol=1e-18)


def test_dense_accumulation_with_landmark_terms(state) -> None:
    steps = [discrete_step(FilterVariant.T_EQF, state, IMU, 0.005, NOISE)] * 3
    assert steps[0].has_landmark_terms
    total = accumulate(steps)
    P = steps[0].dense_phi()
    np.testing.assert_allclose(total.dense_phi(), P @ P @ P, atol=1e-12)


def test_accumulate_empty_raises() -> None:
    with pytest.raises(ValueError):
        accumulate([])


def test_structured_from_dense_roundtrip(state) -> None:
    step = discrete_step(FilterVariant.T_EQF, state, IMU, 0.005, NOISE)
    again = StructuredPhiQ.from_dense(step.dense_phi(), step.dense_q(), state.m)
    np.testing.assert_array_equal(again.dense_phi(), step.dense_phi())
    np.testing.assert_array_equal(again.dense_q(), step.dense_q())
    assert again.q_core.shape == (IMU_DIM, IMU_DIM)

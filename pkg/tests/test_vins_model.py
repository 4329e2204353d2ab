import numpy as np
import pytest

from eqf.errors import BehindCameraError, DimensionMismatchError, NonMonotonicTimeError
from eqf.liegroups import IsdBiasElement, Se23Element, Sek3Element, SemiDirectBiasElement, so3_exp
from eqf.vins_model import (
    GRAVITY,
    CameraModel,
    CameraObservation,
    ImuSample,
    VinsState,
    action_isd,
    action_sd,
    flow,
    imu_intervals,
    isd_element_from_state,
    measure,
    propagate_mean,
    propagate_mean_window,
    random_state,
    sd_element_from_state,
    state_origin,
)


def _assert_states_close(a: VinsState, b: VinsState, atol: float = 1e-10) -> None:
    np.testing.assert_allclose(a.R, b.R, atol=atol)
    np.testing.assert_allclose(a.v, b.v, atol=atol)
    np.testing.assert_allclose(a.p, b.p, atol=atol)
    np.testing.assert_allclose(a.bias, b.bias, atol=atol)
    np.testing.assert_allclose(a.landmarks, b.landmarks, atol=atol)
    assert a.ids == b.ids


def test_state_rejects_mismatched_ids() -> None:
    with pytest.raises(DimensionMismatchError):
        VinsState(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros((2, 3)), (0,))


def test_with_landmark_appends_and_rejects_duplicates(state) -> None:
    extended = state.with_landmark(42, np.array([1.0, 2.0, 3.0]))
    assert extended.m == state.m + 1
    assert extended.ids[-1] == 42
    np.testing.assert_array_equal(extended.landmark(42), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatchError):
        extended.with_landmark(42, np.zeros(3))


def test_random_state_landmarks_in_front_of_camera(rng) -> None:
    camera = CameraModel()
    for _ in range(20):
        xi = random_state(rng, m=5)
        for landmark_id in xi.ids:
            assert np.all(np.isfinite(measure(xi, landmark_id, camera)))


def test_measure_behind_camera_raises() -> None:
    xi = state_origin(1).with_landmarks(np.array([[0.0, 0.0, -1.0]]))
    with pytest.raises(BehindCameraError):
        measure(xi, 0, CameraModel())


def test_measure_projects_optical_axis_to_principal_point() -> None:
    camera = CameraModel()
    xi = state_origin(1).with_landmarks(np.array([[0.0, 0.0, 4.0]]))
    np.testing.assert_allclose(measure(xi, 0, camera), [camera.cx, camera.cy])


def test_measure_invariant_under_world_rigid_motion(state) -> None:
    camera = CameraModel()
    Q = so3_exp(np.array([0.3, -0.2, 1.1]))
    t = np.array([4.0, -1.0, 2.0])
    moved = VinsState(Q @ state.R, Q @ state.v, Q @ state.p + t, state.bw, state.ba,
                      state.landmarks @ Q.T + t, state.ids)
    for landmark_id in state.ids:
        np.testing.assert_allclose(measure(moved, landmark_id, camera), measure(state, landmark_id, camera),
                                   atol=1e-9)


def test_flow_hover_keeps_state() -> None:
    xi = state_origin(0)
    hover = flow(xi, np.zeros(3), -GRAVITY, 0.5)
    _assert_states_close(hover, xi, atol=1e-14)


def test_flow_constant_acceleration() -> None:
    xi = state_origin(0)
    accel = np.array([1.0, 0.0, 0.0]) - GRAVITY
    out = flow(xi, np.zeros(3), accel, 2.0)
    np.testing.assert_allclose(out.v, [2.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(out.p, [2.0, 0.0, 0.0], atol=1e-12)


def test_flow_is_reversible(state) -> None:
    gyro, accel = np.array([0.2, -0.4, 0.7]), np.array([0.5, 0.1, 9.0])
    back = flow(flow(state, gyro, accel, 0.3), gyro, accel, -0.3)
    _assert_states_close(back, state, atol=1e-10)


def test_propagate_mean_substeps_invariance(state) -> None:
    imu = ImuSample(0.0, np.array([0.3, 0.1, -0.5]), np.array([0.2, -0.1, 9.7]))
    one = propagate_mean(state, imu, 0.01)
    many = propagate_mean(state, imu, 0.01, substeps=8)
    _assert_states_close(one, many, atol=1e-12)


def test_propagate_mean_rejects_nonpositive_step(state) -> None:
    imu = ImuSample(0.0, np.zeros(3), np.zeros(3))
    with pytest.raises(NonMonotonicTimeError):
        propagate_mean(state, imu, 0.0)


def test_imu_intervals_and_window() -> None:
    samples = [ImuSample(0.1 * k, np.zeros(3), -GRAVITY) for k in range(3)]
    intervals = imu_intervals(samples, 0.35)
    assert [round(dt, 12) for _, dt in intervals] == [0.1, 0.1, 0.15]
    xi = state_origin(0)
    _assert_states_close(propagate_mean_window(xi, samples, 0.35), xi, atol=1e-13)

    with pytest.raises(NonMonotonicTimeError):
        imu_intervals([samples[1], samples[0]], 0.5)


def test_sd_action_identity_and_compatibility(rng, state) -> None:
    m = state.m
    _assert_states_close(action_sd(SemiDirectBiasElement.identity(m), state), state, atol=1e-14)

    def random_element() -> SemiDirectBiasElement:
        C = Se23Element(so3_exp(rng.standard_normal(3)), rng.standard_normal(3), rng.standard_normal(3))
        return SemiDirectBiasElement(C, rng.standard_normal(6), rng.standard_normal(3 * m))

    X1, X2 = random_element(), random_element()
    _assert_states_close(action_sd(X2, action_sd(X1, state)), action_sd(X1 @ X2, state))


def test_isd_action_identity_and_compatibility(rng, state) -> None:
    m = state.m
    _assert_states_close(action_isd(IsdBiasElement.identity(m), state), state, atol=1e-14)

    def random_element() -> IsdBiasElement:
        B = Sek3Element(so3_exp(rng.standard_normal(3)), rng.standard_normal((2 + m, 3)))
        return IsdBiasElement(B, rng.standard_normal(6))

    X1, X2 = random_element(), random_element()
    _assert_states_close(action_isd(X2, action_isd(X1, state)), action_isd(X1 @ X2, state))


def test_elements_from_state_map_origin_to_state(state) -> None:
    origin = state_origin(state.m, state.ids)
    _assert_states_close(action_sd(sd_element_from_state(state), origin), state)
    _assert_states_close(action_isd(isd_element_from_state(state), origin), state)


def test_camera_observation_subset() -> None:
    frame = CameraObservation(1.0, (3, 5, 7), np.arange(6.0).reshape(3, 2))
    sub = frame.subset([0, 2])
    assert sub.ids == (3, 7)
    np.testing.assert_array_equal(sub.pixels, [[0.0, 1.0], [4.0, 5.0]])
    assert len(sub) == 2

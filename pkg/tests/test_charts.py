import numpy as np
import pytest

from eqf.charts import THETA, FilterVariant, block_names, chart_forward, chart_inverse, error_dim, landmark_slice
from eqf.errors import ChartDomainError, DimensionMismatchError
from eqf.liegroups import skew

ALL_VARIANTS = list(FilterVariant)


def test_error_layout() -> None:
    assert error_dim(0) == 15
    assert error_dim(4) == 27
    assert landmark_slice(2) == slice(21, 24)
    assert block_names(2) == ["theta", "v", "p", "bw", "ba", "f0", "f1"]


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_chart_at_estimate_is_zero(variant, state) -> None:
    np.testing.assert_allclose(chart_forward(variant, state, state), 0.0, atol=1e-12)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_chart_roundtrip(variant, rng, state) -> None:
    for _ in range(50):
        eps = 0.2 * rng.standard_normal(state.dim)
        back = chart_forward(variant, state, chart_inverse(variant, state, eps))
        np.testing.assert_allclose(back, eps, atol=1e-9)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_inverse_roundtrip_of_nearby_state(variant, rng, state) -> None:
    xi = chart_inverse(FilterVariant.ESKF, state, 0.1 * rng.standard_normal(state.dim))
    recovered = chart_inverse(variant, state, chart_forward(variant, state, xi))
    np.testing.assert_allclose(recovered.R, xi.R, atol=1e-10)
    np.testing.assert_allclose(recovered.p, xi.p, atol=1e-10)
    np.testing.assert_allclose(recovered.landmarks, xi.landmarks, atol=1e-10)


def test_t_chart_is_linear_map_of_sd_chart(rng, state) -> None:
    xi = chart_inverse(FilterVariant.ESKF, state, 0.1 * rng.standard_normal(state.dim))
    sd = chart_forward(FilterVariant.SD_EQF, state, xi)
    t = chart_forward(FilterVariant.T_EQF, state, xi)
    np.testing.assert_allclose(t[:15], sd[:15], atol=1e-14)
    for i, f in enumerate(state.landmarks):
        np.testing.assert_allclose(t[landmark_slice(i)], sd[landmark_slice(i)] + skew(f) @ sd[THETA], atol=1e-12)


def test_eskf_error_is_body_frame(state) -> None:
    eps = np.zeros(state.dim)
    eps[THETA] = [0.0, 0.0, 0.1]
    xi = chart_inverse(FilterVariant.ESKF, state, eps)
    np.testing.assert_allclose(state.R.T @ xi.R, np.array([
        [np.cos(0.1), -np.sin(0.1), 0.0], [np.sin(0.1), np.cos(0.1), 0.0], [0.0, 0.0, 1.0]
    ]), atol=1e-12)


def test_wrong_length_error_raises(state) -> None:
    with pytest.raises(DimensionMismatchError):
        chart_inverse(FilterVariant.SD_EQF, state, np.zeros(15))


def test_mismatched_landmarks_raise(state) -> None:
    other = state.with_landmark(99, np.ones(3))
    with pytest.raises(DimensionMismatchError):
        chart_forward(FilterVariant.ESKF, state, other)


def test_rotation_outside_domain_raises(state) -> None:
    eps = np.zeros(state.dim)
    eps[THETA] = [np.pi, 0.0, 0.0]
    with pytest.raises(ChartDomainError):
        chart_inverse(FilterVariant.RI_EKF, state, eps)

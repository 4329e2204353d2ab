from itertools import permutations

import numpy as np
import pytest

from eqf.blocks import IMU_DIM, LowerBlockMatrix
from eqf.charts import FilterVariant
from eqf.errors import DimensionMismatchError
from eqf.transforms import (
    TransformMatrix,
    direct_transform,
    hub_transform,
    transform_closed_form,
    transform_jacobians,
    transform_numeric,
    transform_rate,
    transform_via_hub,
)
from eqf.vins_model import flow, random_state

PAIRS = list(permutations(FilterVariant, 2))


@pytest.mark.parametrize("source,target", PAIRS, ids=lambda v: v.value)
def test_closed_form_matches_numeric(source, target, rng) -> None:
    xhat = random_state(rng, m=2)
    closed = transform_closed_form(source, target, xhat).dense()
    numeric = transform_numeric(source, target, xhat)
    assert np.max(np.abs(closed - numeric)) < 1e-5


def test_transitivity(rng) -> None:
    xhat = random_state(rng, m=3)
    for a, b, c in permutations(FilterVariant, 3):
        T_ac = transform_closed_form(a, c, xhat).dense()
        T_bc_ab = transform_closed_form(b, c, xhat).dense() @ transform_closed_form(a, b, xhat).dense()
        assert np.linalg.norm(T_ac - T_bc_ab) < 1e-10 * max(1.0, np.linalg.norm(T_ac))


def test_identity_for_same_variant(state) -> None:
    T = transform_closed_form(FilterVariant.SD_EQF, FilterVariant.SD_EQF, state)
    np.testing.assert_array_equal(T.dense(), np.eye(state.dim))


def test_sd_to_t_structure(state) -> None:
    T = direct_transform(FilterVariant.SD_EQF, FilterVariant.T_EQF, state)
    assert T.structure() == {"core_identity": True, "coupling_blocks": [0], "landmark": "identity"}


def test_direct_form_rejects_other_pairs(state) -> None:
    with pytest.raises(ValueError):
        direct_transform(FilterVariant.ESKF, FilterVariant.RI_EKF, state)


def test_isd_and_t_coincide(state) -> None:
    T = transform_closed_form(FilterVariant.ISD_EQF, FilterVariant.T_EQF, state)
    np.testing.assert_allclose(T.dense(), np.eye(state.dim), atol=1e-12)


def test_via_hub_agrees_with_direct(state) -> None:
    direct = transform_closed_form(FilterVariant.SD_EQF, FilterVariant.T_EQF, state).dense()
    via_hub = transform_via_hub(FilterVariant.SD_EQF, FilterVariant.T_EQF, state).dense()
    np.testing.assert_allclose(direct, via_hub, atol=1e-12)


def test_hub_transforms_are_lower_block(state) -> None:
    for variant in FilterVariant:
        D = hub_transform(variant, state).dense()
        np.testing.assert_array_equal(D[:IMU_DIM, IMU_DIM:], 0.0)
        assert abs(np.linalg.det(D)) > 0.0


def test_transform_matrix_composition_checks_variants(state) -> None:
    ab = transform_closed_form(FilterVariant.ESKF, FilterVariant.SD_EQF, state)
    bc = transform_closed_form(FilterVariant.SD_EQF, FilterVariant.RI_EKF, state)
    ac = bc @ ab
    assert (ac.source, ac.target) == (FilterVariant.ESKF, FilterVariant.RI_EKF)
    with pytest.raises(DimensionMismatchError):
        ab @ bc
    assert isinstance(ab.inverse(), TransformMatrix)


def test_rate_matches_difference_of_closed_forms(state) -> None:
    gyro, accel = np.array([0.1, -0.3, 0.2]), np.array([0.3, 0.2, 9.6])
    rate = transform_rate(FilterVariant.ESKF, FilterVariant.SD_EQF, state, gyro, accel).dense()
    h = 1e-4
    ahead = transform_closed_form(FilterVariant.ESKF, FilterVariant.SD_EQF, flow(state, gyro, accel, h)).dense()
    behind = transform_closed_form(FilterVariant.ESKF, FilterVariant.SD_EQF, flow(state, gyro, accel, -h)).dense()
    np.testing.assert_allclose(rate, (ahead - behind) / (2 * h), atol=1e-5)


def test_sd_to_t_rate_vanishes(state) -> None:
    rate = transform_rate(FilterVariant.SD_EQF, FilterVariant.T_EQF, state, np.ones(3), np.ones(3))
    np.testing.assert_allclose(rate.dense(), 0.0, atol=1e-9)


def test_transform_jacobians_block_and_dense_paths_agree(rng, state) -> None:
    n = state.dim
    T = hub_transform(FilterVariant.SD_EQF, state)
    T_dot = LowerBlockMatrix(0.1 * rng.standard_normal((IMU_DIM, IMU_DIM)), m=state.m)
    F = LowerBlockMatrix(rng.standard_normal((IMU_DIM, IMU_DIM)), rng.standard_normal((n - IMU_DIM, IMU_DIM)),
                         np.zeros((state.m, 3, 3)), m=state.m)
    G = rng.standard_normal((n, 12))
    H = rng.standard_normal((4, n))

    F_b, G_b, H_b = transform_jacobians(T, T_dot, F, G, H)
    F_d, G_d, H_d = transform_jacobians(T.dense(), T_dot.dense(), F.dense(), G, H)
    np.testing.assert_allclose(F_b.dense(), F_d, atol=1e-9)
    np.testing.assert_allclose(G_b, G_d, atol=1e-12)
    np.testing.assert_allclose(H_b, H_d, atol=1e-9)


def test_transform_jacobians_rejects_bad_shapes(state) -> None:
    T = hub_transform(FilterVariant.SD_EQF, state)
    with pytest.raises(DimensionMismatchError):
        transform_jacobians(T, T, T, np.zeros((3, 12)))

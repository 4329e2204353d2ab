import numpy as np
import pytest

from eqf.charts import FilterVariant
from eqf.errors import DimensionMismatchError
from eqf.observability import (
    STATE_INDEPENDENT_VARIANTS,
    UNOBSERVABLE_DIM,
    analytic_basis,
    build_stack,
    excitation_trajectory,
    linearization_trajectory,
    nullspace,
    perturb_estimates,
    principal_angle,
    stack_transfer_residual,
    state_independence_report,
    transform_basis,
    variant_report,
)
from eqf.transforms import transform_closed_form
from eqf.vins_model import CameraModel, random_state


@pytest.fixture(scope="module")
def excitation():
    states, samples, t_end = excitation_trajectory(4, 1.0, 100, seed=3)
    frames = list(range(0, len(states), 10))
    return states, samples, t_end, frames


def test_excitation_states_follow_flow(excitation) -> None:
    states, samples, t_end, _ = excitation
    assert len(states) == len(samples) + 1
    replay = linearization_trajectory(states[0], samples, t_end)
    np.testing.assert_allclose(replay[-1].p, states[-1].p, atol=1e-12)


@pytest.mark.parametrize("variant", list(FilterVariant), ids=lambda v: v.value)
def test_ideal_stack_has_four_dim_kernel_spanned_by_basis(variant, excitation) -> None:
    states, samples, t_end, frames = excitation
    report = variant_report(variant, states, samples, t_end, frames, CameraModel())
    assert report.nullspace_dim == UNOBSERVABLE_DIM
    assert report.rank == report.dimension - UNOBSERVABLE_DIM
    assert report.basis_residual < 1e-6
    assert report.to_dict()["variant"] == variant.value


def test_perturbed_estimates_keep_kernel_only_for_invariant_charts(excitation) -> None:
    states, samples, t_end, frames = excitation
    perturbed = perturb_estimates(states, np.random.default_rng(0), 0.1, 0.05)
    camera = CameraModel()
    for variant in (FilterVariant.T_EQF, FilterVariant.ISD_EQF):
        assert variant_report(variant, perturbed, samples, t_end, frames, camera).nullspace_dim == UNOBSERVABLE_DIM
    for variant in (FilterVariant.ESKF, FilterVariant.SD_EQF):
        assert variant_report(variant, perturbed, samples, t_end, frames, camera).nullspace_dim < UNOBSERVABLE_DIM


def test_stack_transfer_between_variants(excitation) -> None:
    states, samples, t_end, frames = excitation
    for target in (FilterVariant.SD_EQF, FilterVariant.T_EQF, FilterVariant.RI_EKF):
        residual = stack_transfer_residual(FilterVariant.ESKF, target, states, samples, t_end, frames, CameraModel())
        assert residual < 1e-6


def test_stack_rejects_bad_inputs(excitation) -> None:
    states, samples, t_end, frames = excitation
    with pytest.raises(DimensionMismatchError):
        build_stack(FilterVariant.T_EQF, states[:-1], samples, t_end, frames, CameraModel())
    with pytest.raises(ValueError):
        build_stack(FilterVariant.T_EQF, states, samples, t_end, [len(states) + 5], CameraModel())


def test_invariant_bases_are_bitwise_state_independent(rng) -> None:
    x1, x2 = random_state(rng, m=3), random_state(rng, m=3)
    for variant in FilterVariant:
        report = state_independence_report(variant, x1, x2)
        if variant in STATE_INDEPENDENT_VARIANTS:
            assert report.bitwise_equal and report.independent
        else:
            assert not report.independent
            assert report.angle > 1e-6


def test_state_independence_rejects_mismatched_landmarks(rng) -> None:
    with pytest.raises(DimensionMismatchError):
        state_independence_report(FilterVariant.T_EQF, random_state(rng, m=2), random_state(rng, m=3))


@pytest.mark.parametrize("variant", list(FilterVariant), ids=lambda v: v.value)
def test_transformed_eskf_basis_spans_variant_basis(variant, state) -> None:
    N_eskf = analytic_basis(FilterVariant.ESKF, state)
    mapped = transform_basis(transform_closed_form(FilterVariant.ESKF, variant, state), N_eskf)
    assert principal_angle(mapped, analytic_basis(variant, state).matrix) < 1e-8


def test_transform_basis_dimension_check(state) -> None:
    T = transform_closed_form(FilterVariant.ESKF, FilterVariant.T_EQF, state)
    with pytest.raises(DimensionMismatchError):
        transform_basis(T, np.zeros((state.dim + 3, UNOBSERVABLE_DIM)))


def test_nullspace_and_principal_angle() -> None:
    M = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    N = nullspace(M)
    assert N.shape == (3, 1)
    assert principal_angle(N, np.array([[0.0], [0.0], [2.0]])) < 1e-12
    assert nullspace(np.zeros((2, 3))).shape == (3, 3)
    assert principal_angle(np.eye(3)[:, :1], np.eye(3)[:, 1:2]) == pytest.approx(np.pi / 2)
    assert principal_angle(np.eye(3)[:, :1], np.eye(3)[:, :2]) == pytest.approx(np.pi / 2)

import numpy as np
import pytest

from eqf.blocks import IMU_DIM, LowerBlockMatrix, flops
from eqf.errors import DimensionMismatchError


def _random_lower(rng: np.random.Generator, m: int, coupling_cols=(0, 3), identity_core: bool = False,
                  identity_landmarks: bool = False) -> LowerBlockMatrix:
    core = np.eye(IMU_DIM) if identity_core else np.eye(IMU_DIM) + 0.1 * rng.standard_normal((IMU_DIM, IMU_DIM))
    coupling = np.zeros((3 * m, IMU_DIM))
    for j in coupling_cols:
        coupling[:, 3 * j:3 * j + 3] = rng.standard_normal((3 * m, 3))
    landmark = None if identity_landmarks else np.eye(3) + 0.2 * rng.standard_normal((m, 3, 3))
    return LowerBlockMatrix(core, coupling, landmark, m=m)


def test_structure_tags_follow_exact_zeros(rng) -> None:
    M = _random_lower(rng, 3, coupling_cols=(0,), identity_core=True, identity_landmarks=True)
    assert M.structure() == {"core_identity": True, "coupling_blocks": [0], "landmark": "identity"}
    zero = LowerBlockMatrix(np.eye(IMU_DIM), np.zeros((9, IMU_DIM)), None, m=3)
    assert zero.coupling is None


def test_dense_layout(rng) -> None:
    M = _random_lower(rng, 2)
    D = M.dense()
    assert D.shape == (21, 21)
    np.testing.assert_array_equal(D[:IMU_DIM, IMU_DIM:], 0.0)
    np.testing.assert_array_equal(D[IMU_DIM:IMU_DIM + 3, IMU_DIM + 3:], 0.0)
    np.testing.assert_array_equal(D[IMU_DIM:IMU_DIM + 3, IMU_DIM:IMU_DIM + 3], M.landmark_blocks()[0])


def test_from_dense_roundtrip(rng) -> None:
    M = _random_lower(rng, 3)
    np.testing.assert_array_equal(LowerBlockMatrix.from_dense(M.dense(), 3).dense(), M.dense())


@pytest.mark.parametrize("identity_core,identity_landmarks", [(False, False), (True, True), (True, False)])
def test_products_match_dense(rng, identity_core, identity_landmarks) -> None:
    A = _random_lower(rng, 4, identity_core=identity_core, identity_landmarks=identity_landmarks)
    B = _random_lower(rng, 4, coupling_cols=(2, 4))
    X = rng.standard_normal((A.dim, 5))

    np.testing.assert_allclose((A @ B).dense(), A.dense() @ B.dense(), atol=1e-12)
    np.testing.assert_allclose(A.apply(X), A.dense() @ X, atol=1e-12)
    np.testing.assert_allclose(A.rapply(X.T), X.T @ A.dense(), atol=1e-12)
    np.testing.assert_allclose(A @ X[:, 0], A.dense() @ X[:, 0], atol=1e-12)


def test_inverse_matches_dense(rng) -> None:
    for identity_core in (False, True):
        A = _random_lower(rng, 3, identity_core=identity_core)
        np.testing.assert_allclose(A.inverse().dense(), np.linalg.inv(A.dense()), atol=1e-10)
        np.testing.assert_allclose((A @ A.inverse()).dense(), np.eye(A.dim), atol=1e-10)


def test_congruence_is_symmetric(rng) -> None:
    A = _random_lower(rng, 2)
    S = rng.standard_normal((A.dim, A.dim))
    P = S @ S.T
    result = A.congruence(P)
    np.testing.assert_allclose(result, A.dense() @ P @ A.dense().T, atol=1e-10)
    np.testing.assert_array_equal(result, result.T)


def test_linear_combinations(rng) -> None:
    A, B = _random_lower(rng, 2), _random_lower(rng, 2, identity_landmarks=True)
    np.testing.assert_allclose((A + B).dense(), A.dense() + B.dense())
    np.testing.assert_allclose((A - B).dense(), A.dense() - B.dense())
    np.testing.assert_allclose((A * 2.5).dense(), 2.5 * A.dense())
    np.testing.assert_allclose((0.5 * A).dense(), 0.5 * A.dense())


def test_mismatched_landmark_count_raises(rng) -> None:
    with pytest.raises(DimensionMismatchError):
        _random_lower(rng, 2) @ _random_lower(rng, 3)


def test_identity_without_landmarks() -> None:
    eye = LowerBlockMatrix.identity(0)
    X = np.arange(15.0)
    np.testing.assert_array_equal(eye @ X, X)
    assert eye.is_finite()


def test_flop_counter_scopes_phases(rng) -> None:
    A = _random_lower(rng, 2)
    flops.reset()
    with flops.counting(), flops.scope("propagate"):
        A.apply(rng.standard_normal((A.dim, 4)))
    assert flops.counts["propagate"] > 0
    assert flops.phase == "other"
    assert not flops.enabled
    A.apply(rng.standard_normal((A.dim, 4)))
    assert set(flops.counts) == {"propagate"}
    flops.reset()

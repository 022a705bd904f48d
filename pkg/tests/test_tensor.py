import numpy as np
import pytest

from cals.tensor import (
    DenseTensor,
    gramian,
    hadamard,
    hadamard_fold,
    khatri_rao,
    unfold,
)

from oracles import krp_oracle, unfold_oracle


def test_dense_tensor_validation():
    with pytest.raises(ValueError):
        DenseTensor((4,), np.zeros(4))
    with pytest.raises(ValueError):
        DenseTensor((2, 0), np.zeros(0))
    with pytest.raises(ValueError):
        DenseTensor((2, 3), np.zeros(5))
    with pytest.raises(ValueError):
        DenseTensor((2, 2), np.ones(4), sqnorm=5.0)
    t = DenseTensor((2, 2), np.ones(4), sqnorm=4.0)
    assert t.sqnorm == 4.0


def test_sqnorm_cached_and_correct():
    rng = np.random.default_rng(0)
    t = DenseTensor((3, 4, 5), rng.random(60))
    assert t.sqnorm == pytest.approx(float(np.sum(t.data ** 2)), rel=1e-14)
    assert t.sqnorm is t.sqnorm or t.sqnorm == t.sqnorm  # stable after caching


def test_data_immutable():
    t = DenseTensor((2, 2), np.zeros(4))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


def test_unfold_2x2x2_mode0():
    t = DenseTensor((2, 2, 2), np.arange(1.0, 9.0))
    expected = [[1, 3, 5, 7], [2, 4, 6, 8]]
    assert unfold(t, 0).tolist() == expected


def test_unfold_mode0_first_entry_and_walk():
    rng = np.random.default_rng(1)
    t = DenseTensor((3, 4, 2), rng.random(24))
    u = unfold(t, 0)
    assert u[0, 0] == t.data[0]
    # Column-major walk of the view reproduces the flat data exactly.
    assert np.array_equal(u.ravel(order="F"), t.data)


def test_unfold_matrix_mode1_is_transpose():
    m = np.arange(6.0).reshape(2, 3)
    t = DenseTensor.from_array(m)
    assert np.array_equal(unfold(t, 1), m.T)


@pytest.mark.parametrize("dims", [(2, 3, 4), (3, 2, 2, 2), (5, 4, 3, 2)])
def test_unfold_matches_oracle_all_modes(dims):
    rng = np.random.default_rng(2)
    arr = rng.random(dims)
    t = DenseTensor.from_array(arr)
    for mode in range(len(dims)):
        assert np.array_equal(unfold(t, mode), unfold_oracle(arr, mode))


def test_unfold_views_are_no_copy():
    rng = np.random.default_rng(3)
    t = DenseTensor((3, 4, 5), rng.random(60))
    assert np.shares_memory(unfold(t, 0), t.data)
    assert np.shares_memory(unfold(t, 2), t.data)


def test_unfold_mode_out_of_range():
    t = DenseTensor((2, 2), np.zeros(4))
    with pytest.raises(ValueError):
        unfold(t, 2)
    with pytest.raises(ValueError):
        unfold(t, -1)


def test_khatri_rao_column_vectors():
    a = np.array([[1.0], [2.0]])
    b = np.array([[3.0], [4.0], [5.0]])
    assert khatri_rao(a, b).ravel().tolist() == [3, 4, 5, 6, 8, 10]


def test_khatri_rao_identity_1x1():
    one = np.array([[1.0]])
    assert khatri_rao(one, one).tolist() == [[1.0]]


def test_khatri_rao_mismatch():
    with pytest.raises(ValueError):
        khatri_rao(np.zeros((2, 2)), np.zeros((3, 3)))


def test_khatri_rao_matches_oracle():
    rng = np.random.default_rng(4)
    a = rng.random((4, 3))
    b = rng.random((5, 3))
    assert np.allclose(khatri_rao(a, b), krp_oracle([a, b]), rtol=0, atol=0)


def test_fusion_identity_exact():
    # Concatenating instances then taking the KRP equals concatenating the
    # per-instance KRPs, with identical arithmetic: exact equality.
    rng = np.random.default_rng(5)
    for _ in range(20):
        a1, a2 = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        b1, b2 = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        fused = khatri_rao(np.hstack([a1, a2]), np.hstack([b1, b2]))
        blocks = np.hstack([khatri_rao(a1, b1), khatri_rao(a2, b2)])
        assert np.array_equal(fused, blocks)


def test_hadamard():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert hadamard(a, b).tolist() == [[5, 12], [21, 32]]
    assert np.array_equal(hadamard(a, np.ones((2, 2))), a)
    with pytest.raises(ValueError):
        hadamard(a, np.ones((3, 2)))


def test_hadamard_fold_of_gramians():
    ones = np.ones((2, 1))
    g = gramian(ones)
    assert hadamard_fold([g, g]).tolist() == [[4.0]]
    with pytest.raises(ValueError):
        hadamard_fold([])


def test_gramian_examples():
    assert gramian(np.ones((2, 1))).tolist() == [[2.0]]
    assert np.array_equal(gramian(np.eye(3)), np.eye(3))


def test_gramian_symmetric_and_psd():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((5, 3))
    g = gramian(a)
    assert np.array_equal(g, g.T)  # symmetric by construction, zero ulp
    for _ in range(10):
        x = rng.standard_normal(3)
        assert x @ g @ x >= -1e-12

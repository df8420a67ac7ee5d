from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partae import autodiff as ad
from partae.distances import (KDTREE_CUTOFF, _nearest, chamfer, chamfer_grad,
                              chamfer_loss, emd_approx, emd_exact)


def brute_chamfer(a, b):
    total = 0.0
    for p in a:
        total += min(((p - q) ** 2).sum() for q in b)
    for q in b:
        total += min(((p - q) ** 2).sum() for p in a)
    return total


def brute_emd(a, b):
    best = np.inf
    for perm in permutations(range(len(b))):
        cost = sum(np.linalg.norm(a[i] - b[j]) for i, j in enumerate(perm))
        best = min(best, cost)
    return best


# ---------------------------------------------------------------------------
# chamfer
# ---------------------------------------------------------------------------


def test_chamfer_zero_on_identical():
    pts = np.random.default_rng(0).standard_normal((20, 3))
    assert chamfer(pts, pts.copy()) == 0.0


def test_chamfer_hand_example():
    s1 = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    s2 = np.array([[0.0, 0, 0]])
    assert chamfer(s1, s2) == 1.0


def test_chamfer_empty_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


def test_chamfer_symmetry_exact():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a = rng.standard_normal((8, 3))
        b = rng.standard_normal((11, 3))
        assert chamfer(a, b) == chamfer(b, a)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=60, deadline=None)
def test_chamfer_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((int(rng.integers(1, 9)), 3))
    b = rng.standard_normal((int(rng.integers(1, 9)), 3))
    assert abs(chamfer(a, b) - brute_chamfer(a, b)) < 1e-9


def test_kdtree_path_equals_bruteforce_path():
    rng = np.random.default_rng(2)
    n = KDTREE_CUTOFF + 40
    a = rng.standard_normal((n, 3))
    b = rng.standard_normal((n, 3))
    d_tree, idx_tree = _nearest(a, b)
    d_brute = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    np.testing.assert_array_equal(idx_tree, d_brute.argmin(axis=1))
    np.testing.assert_allclose(d_tree, d_brute.min(axis=1), rtol=1e-12)


def test_chamfer_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 3))
    b = rng.standard_normal((7, 3))
    _, grad = chamfer_grad(a, b)
    step = 1e-6
    for idx in np.ndindex(a.shape):
        orig = a[idx]
        a[idx] = orig + step
        hi = chamfer(a, b)
        a[idx] = orig - step
        lo = chamfer(a, b)
        a[idx] = orig
        numeric = (hi - lo) / (2 * step)
        assert abs(grad[idx] - numeric) / max(abs(numeric), 1e-3) <= 1e-4


def test_chamfer_loss_op_backward():
    rng = np.random.default_rng(4)
    pred = rng.standard_normal((5, 3))
    target = rng.standard_normal((5, 3))
    tape = ad.Tape()
    pred_var = tape.leaf(pred)
    loss = chamfer_loss(tape, pred_var, target)
    ad.backward(tape, loss)
    value, grad = chamfer_grad(pred, target)
    assert float(loss.data) == value
    np.testing.assert_allclose(pred_var.grad, grad, rtol=1e-12)


# ---------------------------------------------------------------------------
# exact EMD
# ---------------------------------------------------------------------------


def test_emd_exact_zero_on_identical():
    pts = np.random.default_rng(5).standard_normal((12, 3))
    assert emd_exact(pts, pts.copy()) <= 1e-12


def test_emd_exact_hand_example():
    s1 = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    s2 = np.array([[0.0, 1, 0], [1.0, 1, 0]])
    assert abs(emd_exact(s1, s2) - 2.0) < 1e-12


def test_emd_exact_size_mismatch():
    with pytest.raises(ValueError, match="equal sizes"):
        emd_exact(np.zeros((2, 3)), np.zeros((3, 3)))


def test_emd_exact_over_limit():
    with pytest.raises(ValueError, match="limited"):
        emd_exact(np.zeros((10, 3)), np.zeros((10, 3)), limit=8)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=40, deadline=None)
def test_emd_exact_matches_factorial_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    a = rng.standard_normal((n, 3))
    b = rng.standard_normal((n, 3))
    assert abs(emd_exact(a, b) - brute_emd(a, b)) <= 1e-9


def test_emd_exact_permutation_invariant():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((10, 3))
    b = rng.standard_normal((10, 3))
    ref = emd_exact(a, b)
    for _ in range(5):
        assert emd_exact(a[rng.permutation(10)], b[rng.permutation(10)]) == ref


def test_emd_exact_translation_covariance():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((9, 3))
    b = rng.standard_normal((9, 3))
    shift = np.array([3.0, -2.0, 0.5])
    assert abs(emd_exact(a + shift, b + shift) - emd_exact(a, b)) <= 1e-9


# ---------------------------------------------------------------------------
# approximate EMD
# ---------------------------------------------------------------------------


def test_emd_approx_identical_sets():
    pts = np.random.default_rng(8).standard_normal((32, 3))
    assert emd_approx(pts, pts.copy()) <= 1e-6


def test_emd_approx_single_point():
    a = np.array([[0.0, 0, 0]])
    b = np.array([[3.0, 4, 0]])
    assert abs(emd_approx(a, b) - 5.0) <= 1e-9


def test_emd_approx_within_one_percent_of_exact():
    rng = np.random.default_rng(9)
    for _ in range(25):
        a = rng.standard_normal((64, 3))
        b = rng.standard_normal((64, 3))
        exact = emd_exact(a, b)
        approx = emd_approx(a, b)
        assert approx <= exact * 1.01
        assert approx >= exact - 1e-9  # feasible matching never beats optimum


def test_emd_approx_never_below_exact_on_structured_pairs():
    rng = np.random.default_rng(10)
    for _ in range(10):
        base = rng.standard_normal((48, 3))
        jitter = base + 0.01 * rng.standard_normal((48, 3))
        exact = emd_exact(base, jitter)
        approx = emd_approx(base, jitter)
        assert exact - 1e-9 <= approx <= exact * 1.01

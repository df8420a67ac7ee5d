import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partae import autodiff as ad


def scalar_loop_affine_relu(x, w, b):
    """Independent per-row oracle: plain Python loops, no matrix ops."""
    n, d = x.shape
    out_dim = w.shape[1]
    out = np.zeros((n, out_dim))
    for i in range(n):
        for j in range(out_dim):
            acc = b[j]
            for m in range(d):
                acc += x[i, m] * w[m, j]
            out[i, j] = max(acc, 0.0)
    return out


def brute_segment_max(features, labels, k):
    """Per-segment max oracle by explicit iteration."""
    n, l = features.shape
    parts = np.zeros((k, l), dtype=features.dtype)
    present = np.zeros(k, dtype=bool)
    for p in range(1, k + 1):
        rows = [i for i in range(n) if labels[i] == p]
        if rows:
            present[p - 1] = True
            parts[p - 1] = features[rows].max(axis=0)
    return parts, present


# ---------------------------------------------------------------------------
# pointwise MLP
# ---------------------------------------------------------------------------


def make_layer(name, in_dim, out_dim, seed=0, **kw):
    return ad.Dense(name, in_dim, out_dim, rng=np.random.default_rng(seed), **kw)


def test_identity_layer_is_relu():
    layer = make_layer("l0", 3, 3, relu=True)
    layer.w[...] = np.eye(3, dtype=np.float32)
    layer.b[...] = 0
    tape = ad.Tape()
    out = ad.pointwise_mlp(tape, [layer], tape.leaf(np.array([[1.0, -2.0, 3.0]],
                                                             dtype=np.float32)))
    np.testing.assert_array_equal(out.data, [[1.0, 0.0, 3.0]])


def test_weight_sharing_permutes_rows():
    rng = np.random.default_rng(4)
    layer = make_layer("l0", 3, 5, seed=4)
    x = rng.standard_normal((2, 3)).astype(np.float32)
    tape = ad.Tape()
    out = ad.pointwise_mlp(tape, [layer], tape.leaf(x)).data
    tape2 = ad.Tape()
    out_swapped = ad.pointwise_mlp(tape2, [layer], tape2.leaf(x[::-1].copy())).data
    np.testing.assert_array_equal(out_swapped, out[::-1])


def test_affine_relu_matches_scalar_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 3))
    layer = make_layer("l0", 3, 5, seed=7)
    layer.astype(np.float64)
    tape = ad.Tape()
    out = ad.pointwise_mlp(tape, [layer], tape.leaf(x)).data
    expected = scalar_loop_affine_relu(x, layer.w, layer.b)
    assert np.abs(out - expected).max() <= 1e-12


def test_dimension_mismatch_names_layer():
    layers = [make_layer("enc0", 3, 4), make_layer("enc1", 5, 6)]
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError, match="layer 1"):
        ad.pointwise_mlp(tape, layers, tape.leaf(np.zeros((2, 3), dtype=np.float32)))


def test_pointwise_locality_inference_mode():
    # with frozen batch-norm stats, changing row i changes only output row i
    rng = np.random.default_rng(9)
    layers = [make_layer("l0", 3, 6, seed=1, batchnorm=True),
              make_layer("l1", 6, 4, seed=2, batchnorm=True)]
    x = rng.standard_normal((5, 3)).astype(np.float32)
    tape = ad.Tape()
    base = ad.pointwise_mlp(tape, layers, tape.leaf(x), training=False).data
    x2 = x.copy()
    x2[2] += 1.0
    tape2 = ad.Tape()
    out = ad.pointwise_mlp(tape2, layers, tape2.leaf(x2), training=False).data
    changed = np.any(out != base, axis=1)
    np.testing.assert_array_equal(changed, [False, False, True, False, False])


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def test_segment_maxpool_example():
    tape = ad.Tape()
    f = tape.leaf(np.array([[1.0, 5.0], [3.0, 2.0], [4.0, 0.0]]))
    parts, argmax, present = ad.segment_maxpool(tape, f, [1, 1, 2], 2)
    np.testing.assert_array_equal(parts.data, [[3.0, 5.0], [4.0, 0.0]])
    np.testing.assert_array_equal(present, [True, True])
    np.testing.assert_array_equal(argmax, [[1, 0], [2, 2]])


def test_single_part_equals_global_pool():
    rng = np.random.default_rng(3)
    f = rng.standard_normal((10, 4))
    tape = ad.Tape()
    parts, _, present = ad.segment_maxpool(tape, tape.leaf(f), [1] * 10, 1)
    np.testing.assert_array_equal(parts.data[0], f.max(axis=0))
    assert present[0]


def test_padding_never_contributes():
    tape = ad.Tape()
    f = tape.leaf(np.array([[9.0, 9.0], [8.0, 8.0], [1.0, 2.0]]))
    parts, _, present = ad.segment_maxpool(tape, f, [0, 0, 1], 2)
    np.testing.assert_array_equal(present, [True, False])
    np.testing.assert_array_equal(parts.data[0], [1.0, 2.0])


def test_label_above_k_rejected():
    tape = ad.Tape()
    f = tape.leaf(np.zeros((3, 2)))
    with pytest.raises(ad.InvalidLabelError):
        ad.segment_maxpool(tape, f, [1, 2, 3], 2)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=50, deadline=None)
def test_segment_maxpool_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    k = int(rng.integers(1, 6))
    f = rng.standard_normal((n, 5))
    labels = rng.integers(0, k + 1, n)
    tape = ad.Tape()
    parts, _, present = ad.segment_maxpool(tape, tape.leaf(f), labels, k)
    exp_parts, exp_present = brute_segment_max(f, labels, k)
    np.testing.assert_array_equal(present, exp_present)
    np.testing.assert_array_equal(parts.data[present], exp_parts[exp_present])


def test_global_pool_example():
    tape = ad.Tape()
    parts = tape.leaf(np.array([[3.0, 5.0], [4.0, 0.0]]))
    out = ad.masked_colmax(tape, parts, [True, True])
    np.testing.assert_array_equal(out.data, [[4.0, 5.0]])


def test_global_pool_single_part():
    tape = ad.Tape()
    parts = tape.leaf(np.array([[3.0, 5.0], [40.0, 10.0]]))
    out = ad.masked_colmax(tape, parts, [True, False])
    np.testing.assert_array_equal(out.data, [[3.0, 5.0]])


def test_global_pool_requires_presence():
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError):
        ad.masked_colmax(tape, tape.leaf(np.zeros((2, 2))), [False, False])


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=50, deadline=None)
def test_two_stage_pool_equals_direct_colmax(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    k = int(rng.integers(1, 6))
    f = rng.standard_normal((n, 7)).astype(np.float32)
    labels = rng.integers(0, k + 1, n)
    labels[0] = 1  # at least one real point
    tape = ad.Tape()
    fv = tape.leaf(f)
    parts, _, present = ad.segment_maxpool(tape, fv, labels, k)
    two_stage = ad.masked_colmax(tape, parts, present).data[0]
    direct = f[labels > 0].max(axis=0)
    np.testing.assert_array_equal(two_stage, direct)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=40, deadline=None)
def test_pooling_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n, k = 30, 4
    f = rng.standard_normal((n, 6)).astype(np.float32)
    labels = rng.integers(0, k + 1, n)
    labels[0] = 2
    perm = rng.permutation(n)
    tape = ad.Tape()
    parts, _, present = ad.segment_maxpool(tape, tape.leaf(f), labels, k)
    tape2 = ad.Tape()
    parts_p, _, present_p = ad.segment_maxpool(tape2, tape2.leaf(f[perm]),
                                               labels[perm], k)
    np.testing.assert_array_equal(present, present_p)
    np.testing.assert_array_equal(parts.data, parts_p.data)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_relu_sum_gradient():
    tape = ad.Tape()
    x = tape.leaf(np.array([[2.0, -1.0]]))
    loss = ad.sum_all(tape, ad.relu(tape, x))
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0]])


def test_maxpool_tie_gradient_single_winner():
    tape = ad.Tape()
    f = tape.leaf(np.array([[3.0], [7.0], [7.0]]))
    parts, argmax, present = ad.segment_maxpool(tape, f, [1, 1, 1], 1)
    loss = ad.sum_all(tape, parts)
    ad.backward(tape, loss)
    assert argmax[0, 0] == 1  # lowest index among the tied rows
    np.testing.assert_array_equal(f.grad, [[0.0], [1.0], [0.0]])
    assert f.grad.sum() == 1.0


def test_backward_before_forward_is_tape_error():
    tape = ad.Tape()
    with pytest.raises(ad.TapeError):
        ad.backward(tape, ad.Var(np.float64(0.0)))


def test_backward_rejects_nonscalar_loss():
    tape = ad.Tape()
    x = tape.leaf(np.ones((2, 2)))
    y = ad.relu(tape, x)
    with pytest.raises(ad.TapeError, match="scalar"):
        ad.backward(tape, y)


def test_random_network_matches_finite_differences():
    layers = [make_layer("a", 4, 6, seed=11, batchnorm=True),
              make_layer("b", 6, 3, seed=12, batchnorm=True)]
    for layer in layers:
        layer.astype(np.float64)
    x = np.random.default_rng(13).standard_normal((5, 4))

    def loss_fn(tape):
        out = ad.pointwise_mlp(tape, layers, tape.leaf(x), training=True)
        return ad.mean_all(tape, ad.mul(tape, out, out))

    params = {}
    for layer in layers:
        params.update(layer.parameters())
    buffers = tuple(b for layer in layers for b in layer.buffers().values())
    assert ad.grad_check(loss_fn, params, step=1e-6, buffers=buffers) <= 1e-4


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    g = {"w": np.zeros(2, dtype=np.float32)}
    state = ad.AdamState(lr=0.1)
    ad.adam_step(p, g, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_is_signed_lr():
    # bias-corrected first step: update = -lr * g / (|g| + eps) ~ -lr*sign(g)
    p = {"w": np.array([0.0, 0.0], dtype=np.float64)}
    g = {"w": np.array([3.0, -0.5], dtype=np.float64)}
    ad.adam_step(p, g, ad.AdamState(lr=0.02))
    np.testing.assert_allclose(p["w"], [-0.02, 0.02], rtol=1e-6)


def test_adam_is_deterministic():
    rng = np.random.default_rng(0)
    grads = [rng.standard_normal(4).astype(np.float32) for _ in range(5)]

    def run():
        p = {"w": np.ones(4, dtype=np.float32)}
        state = ad.AdamState(lr=0.05)
        for g in grads:
            ad.adam_step(p, {"w": g.copy()}, state)
        return p["w"]

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_nonfinite_gradient():
    p = {"w": np.ones(2, dtype=np.float32)}
    g = {"w": np.array([1.0, np.nan], dtype=np.float32)}
    with pytest.raises(ad.NonFiniteUpdateError, match="'w'"):
        ad.adam_step(p, g, ad.AdamState(lr=0.1))


# ---------------------------------------------------------------------------
# grad_check tolerances per layer kind
# ---------------------------------------------------------------------------


def test_gradcheck_linear_quadratic_is_nearly_exact():
    layer = make_layer("lin", 3, 2, relu=False, seed=5).astype(np.float64)
    x = np.random.default_rng(6).standard_normal((4, 3))

    def loss_fn(tape):
        out = ad.pointwise_mlp(tape, [layer], tape.leaf(x))
        return ad.mean_all(tape, ad.mul(tape, out, out))

    assert ad.grad_check(loss_fn, layer.parameters(), step=1e-6) <= 1e-8


def test_gradcheck_network_with_maxpool():
    layer = make_layer("l0", 3, 4, seed=8).astype(np.float64)
    rng = np.random.default_rng(9)
    x = rng.standard_normal((6, 3))
    labels = np.array([1, 1, 2, 2, 0, 1])

    def loss_fn(tape):
        out = ad.pointwise_mlp(tape, [layer], tape.leaf(x))
        parts, _, present = ad.segment_maxpool(tape, out, labels, 2)
        pooled = ad.masked_colmax(tape, parts, present)
        return ad.mean_all(tape, ad.mul(tape, pooled, pooled))

    # random continuous inputs keep a comfortable margin around pooling ties
    assert ad.grad_check(loss_fn, layer.parameters(), step=1e-6) <= 1e-4


# ---------------------------------------------------------------------------
# misc op gradients against finite differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("op", ["exp", "sqrt", "softplus", "softmax", "meanpool"])
def test_elementwise_op_grads(op):
    rng = np.random.default_rng(hash(op) % 2 ** 31)
    w = rng.standard_normal((3, 4)) + (2.0 if op == "sqrt" else 0.0)
    params = {"w": w}

    def loss_fn(tape):
        v = tape.leaf(w, "w")
        if op == "exp":
            out = ad.exp(tape, v)
        elif op == "sqrt":
            out = ad.sqrt(tape, v)
        elif op == "softplus":
            out = ad.softplus(tape, v)
        elif op == "softmax":
            out = ad.softmax_rows(tape, v)
        else:
            out, _ = ad.segment_meanpool(tape, v, [1, 2, 1], 2)
        return ad.mean_all(tape, ad.mul(tape, out, out))

    assert ad.grad_check(loss_fn, params, step=1e-6) <= 1e-4


def test_cross_entropy_matches_manual():
    logits = np.array([[0.2, -0.1, 0.4], [1.0, 0.0, -1.0], [0.0, 0.0, 0.0]])
    labels = np.array([1, 2, 0])  # third row is padding, ignored
    tape = ad.Tape()
    loss = ad.cross_entropy(tape, tape.leaf(logits), labels, ignore_label=0)
    expected = 0.0
    for row, lbl in [(0, 1), (1, 2)]:
        z = logits[row]
        expected += -(z[lbl] - np.log(np.exp(z).sum()))
    assert abs(float(loss.data) - expected / 2) < 1e-12


def test_cross_entropy_gradient():
    rng = np.random.default_rng(21)
    logits = rng.standard_normal((5, 4))
    labels = np.array([1, 3, 0, 2, 1])
    params = {"logits": logits}

    def loss_fn(tape):
        return ad.cross_entropy(tape, tape.leaf(logits, "logits"), labels)

    assert ad.grad_check(loss_fn, params, step=1e-6) <= 1e-6

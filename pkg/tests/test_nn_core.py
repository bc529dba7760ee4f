import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuseau import nn_core


def _rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Linear


def test_linear_identity():
    p = nn_core.LinearParams(weight=np.eye(3), bias=np.zeros(3))
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(nn_core.linear_apply(p, x), x)


def test_linear_zero_weight_returns_bias():
    p = nn_core.LinearParams(weight=np.zeros((2, 3)), bias=np.array([5.0, -1.0]))
    np.testing.assert_array_equal(nn_core.linear_apply(p, np.ones(3)), [5.0, -1.0])


def test_linear_hand_product():
    p = nn_core.LinearParams(weight=np.array([[1.0, 2.0], [3.0, 4.0]]),
                             bias=np.zeros(2))
    np.testing.assert_array_equal(nn_core.linear_apply(p, np.ones(2)), [3.0, 7.0])


def test_linear_dim_mismatch():
    p = nn_core.LinearParams(weight=np.eye(3), bias=np.zeros(3))
    with pytest.raises(ValueError, match="dim"):
        nn_core.linear_apply(p, np.ones(4))


def test_linear_broadcasts_over_leading_axes():
    rng = _rng(1)
    p = nn_core.init_linear(rng, 4, 3)
    x = rng.standard_normal((2, 5, 4))
    out = nn_core.linear_apply(p, x)
    assert out.shape == (2, 5, 3)
    np.testing.assert_allclose(out[1, 2], p.weight @ x[1, 2] + p.bias, atol=1e-14)


def test_linear_backward_matches_fd():
    rng = _rng(2)
    p = nn_core.init_linear(rng, 4, 3)
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((5, 3))  # fixed projection making the loss scalar
    tensors = {"weight": p.weight, "bias": p.bias, "x": x}

    def loss():
        return float(np.sum(nn_core.linear_apply(p, x) * w))

    dx, dweight, dbias = nn_core.linear_backward(p, x, w)
    fd = nn_core.finite_difference_gradients(loss, tensors)
    np.testing.assert_allclose(dweight, fd["weight"], rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(dbias, fd["bias"], rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(dx, fd["x"], rtol=1e-6, atol=1e-9)


# ---------------------------------------------------------------------------
# GRU


def _zero_gru(n_in, hidden):
    z = lambda *shape: np.zeros(shape)
    direction = nn_core.GruDirectionParams(
        w_z=z(hidden, n_in), w_r=z(hidden, n_in), w_h=z(hidden, n_in),
        u_z=z(hidden, hidden), u_r=z(hidden, hidden), u_h=z(hidden, hidden),
        b_z=z(hidden), b_r=z(hidden), b_h=z(hidden))
    import copy
    return nn_core.GruParams(fw=direction, bw=copy.deepcopy(direction))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gru_recursion_oracle(d, seq):
    """Step-by-step transcription of the gate equations, loops only."""
    h = np.zeros(d.hidden)
    for x in seq:
        z = _sigmoid(d.w_z @ x + d.u_z @ h + d.b_z)
        r = _sigmoid(d.w_r @ x + d.u_r @ h + d.b_r)
        c = np.tanh(d.w_h @ x + d.u_h @ (r * h) + d.b_h)
        h = (1.0 - z) * h + z * c
    return h


def test_gru_zero_params_zero_output():
    p = _zero_gru(3, 2)
    seq = _rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(nn_core.bigru_encode(p, seq), np.zeros(4))


def test_gru_length_one_both_directions_see_same_element():
    rng = _rng(3)
    p = nn_core.init_gru(rng, 3, 2)
    x = rng.standard_normal((1, 3))
    out = nn_core.bigru_encode(p, x)
    np.testing.assert_allclose(out[:2], _gru_recursion_oracle(p.fw, x), atol=1e-12)
    np.testing.assert_allclose(out[2:], _gru_recursion_oracle(p.bw, x), atol=1e-12)


def test_gru_matches_hand_recursion():
    rng = _rng(4)
    p = nn_core.init_gru(rng, 3, 2)
    seq = rng.standard_normal((3, 3))
    out = nn_core.bigru_encode(p, seq)
    np.testing.assert_allclose(out[:2], _gru_recursion_oracle(p.fw, seq), atol=1e-12)
    np.testing.assert_allclose(out[2:], _gru_recursion_oracle(p.bw, seq[::-1]), atol=1e-12)


def test_gru_rejects_empty_or_mismatched():
    p = nn_core.init_gru(_rng(0), 3, 2)
    with pytest.raises(ValueError):
        nn_core.bigru_encode(p, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        nn_core.bigru_encode(p, np.zeros((2, 5)))


@given(st.integers(1, 7))
def test_gru_output_dim_is_2h(t):
    p = nn_core.init_gru(_rng(5), 3, 4)
    seq = _rng(t).standard_normal((t, 3))
    assert nn_core.bigru_encode(p, seq).shape == (8,)


def test_batched_gru_matches_per_sequence_encode():
    # right padding must not leak into the encoding
    rng = _rng(6)
    p = nn_core.init_gru(rng, 3, 4)
    seqs = [rng.standard_normal((t, 3)) for t in (5, 1, 3, 2)]
    lengths = np.array([len(s) for s in seqs])
    xs = np.zeros((4, 5, 3))
    for i, s in enumerate(seqs):
        xs[i, : len(s)] = s
    batched, _ = nn_core.bigru_forward(p, xs, lengths)
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batched[i], nn_core.bigru_encode(p, s), atol=1e-12)


def test_batched_gru_ignores_padding_values():
    rng = _rng(7)
    p = nn_core.init_gru(rng, 3, 4)
    xs = rng.standard_normal((2, 4, 3))
    lengths = np.array([2, 4])
    out_a, _ = nn_core.bigru_forward(p, xs, lengths)
    poisoned = xs.copy()
    poisoned[0, 2:] = 1e6
    out_b, _ = nn_core.bigru_forward(p, poisoned, lengths)
    np.testing.assert_array_equal(out_a, out_b)


def test_reverse_padded_hand_case():
    xs = np.array([[1, 2, 3, 9], [4, 5, 9, 9]], dtype=float)[:, :, None]
    out = nn_core._reverse_padded(xs, np.array([3, 2]))
    np.testing.assert_array_equal(out[:, :, 0], [[3, 2, 1, 9], [5, 4, 9, 9]])


def test_bigru_backward_matches_fd():
    rng = _rng(8)
    p = nn_core.init_gru(rng, 3, 2)
    xs = rng.standard_normal((3, 4, 3))
    lengths = np.array([4, 2, 3])
    w = rng.standard_normal((3, 4))
    tensors = dict(p.fw.tensors("fw"))
    tensors.update(p.bw.tensors("bw"))
    tensors["xs"] = xs

    def loss():
        out, _ = nn_core.bigru_forward(p, xs, lengths)
        return float(np.sum(out * w))

    out, cache = nn_core.bigru_forward(p, xs, lengths)
    dxs, grads = nn_core.bigru_backward(p, cache, w)
    fd = nn_core.finite_difference_gradients(loss, tensors)
    for name in grads:
        np.testing.assert_allclose(grads[name], fd[name], rtol=1e-5, atol=1e-10,
                                   err_msg=name)
    np.testing.assert_allclose(dxs, fd["xs"], rtol=1e-5, atol=1e-10)
    # padded positions cannot influence the loss
    assert np.all(dxs[1, 2:] == 0) and np.all(dxs[2, 3:] == 0)


# ---------------------------------------------------------------------------
# MLP


def test_mlp_identity_layers():
    layers = [nn_core.LinearParams(weight=np.eye(3), bias=np.zeros(3)),
              nn_core.LinearParams(weight=np.eye(3), bias=np.zeros(3))]
    p = nn_core.MlpParams(layers=layers)
    x = np.array([0.3, -0.7, 2.0])
    np.testing.assert_array_equal(nn_core.mlp_apply(p, x, "identity"), x)


def test_mlp_zero_final_layer_gives_zero_logits():
    rng = _rng(9)
    p = nn_core.init_mlp(rng, 4, 3, 2)
    p.layers[1].weight[:] = 0.0
    p.layers[1].bias[:] = 0.0
    np.testing.assert_array_equal(nn_core.mlp_apply(p, rng.standard_normal(4)),
                                  np.zeros(2))


def test_mlp_hand_forward():
    rng = _rng(10)
    p = nn_core.init_mlp(rng, 4, 3, 2)
    x = rng.standard_normal(4)
    hidden = np.maximum(p.layers[0].weight @ x + p.layers[0].bias, 0.0)
    expected = p.layers[1].weight @ hidden + p.layers[1].bias
    np.testing.assert_allclose(nn_core.mlp_apply(p, x), expected, atol=1e-14)


def test_mlp_requires_exactly_two_layers():
    rng = _rng(0)
    with pytest.raises(ValueError):
        nn_core.MlpParams(layers=[nn_core.init_linear(rng, 3, 3)])


def test_mlp_backward_matches_fd():
    rng = _rng(11)
    p = nn_core.init_mlp(rng, 4, 5, 3)
    x = rng.standard_normal((6, 4))
    w = rng.standard_normal((6, 3))
    tensors = {"0.weight": p.layers[0].weight, "0.bias": p.layers[0].bias,
               "1.weight": p.layers[1].weight, "1.bias": p.layers[1].bias,
               "x": x}

    def loss():
        return float(np.sum(nn_core.mlp_apply(p, x) * w))

    logits, cache = nn_core.mlp_forward(p, x)
    dx, grads = nn_core.mlp_backward(p, cache, w)
    fd = nn_core.finite_difference_gradients(loss, tensors)
    for name in grads:
        np.testing.assert_allclose(grads[name], fd[name], rtol=1e-5, atol=1e-9,
                                   err_msg=name)
    np.testing.assert_allclose(dx, fd["x"], rtol=1e-5, atol=1e-9)


# ---------------------------------------------------------------------------
# Initialization


def test_init_bounds_and_determinism():
    a = nn_core.init_linear(_rng(42), 16, 8)
    b = nn_core.init_linear(_rng(42), 16, 8)
    np.testing.assert_array_equal(a.weight, b.weight)
    assert np.abs(a.weight).max() <= 1 / 4  # 1/sqrt(16)
    assert np.abs(a.bias).max() <= 1 / 4

    g = nn_core.init_gru_direction(_rng(1), 25, 4)
    assert np.abs(g.w_z).max() <= 1 / 5   # input fan-in 25
    assert np.abs(g.u_z).max() <= 1 / 2   # hidden fan-in 4
    assert np.abs(g.b_h).max() <= 1 / 2


# ---------------------------------------------------------------------------
# Clipping


def test_clip_rescales_to_max_norm():
    out = nn_core.clip_global_norm({"g": np.array([3.0, 4.0])}, 1.0)
    np.testing.assert_allclose(out["g"], [0.6, 0.8], atol=1e-15)


def test_clip_leaves_small_gradients_alone():
    grads = {"g": np.array([0.3, 0.4])}
    out = nn_core.clip_global_norm(grads, 1.0)
    np.testing.assert_array_equal(out["g"], grads["g"])
    out["g"][0] = 99.0  # returned tensors are copies
    assert grads["g"][0] == 0.3


def test_clip_norm_across_tensors():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = nn_core.clip_global_norm(grads, 2.5)
    assert abs(nn_core.global_norm(out) - 2.5) < 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_clip_idempotent_and_bounded(seed, max_norm):
    grads = {"g": np.random.default_rng(seed).standard_normal(8)}
    once = nn_core.clip_global_norm(grads, max_norm)
    twice = nn_core.clip_global_norm(once, max_norm)
    assert nn_core.global_norm(once) <= min(nn_core.global_norm(grads), max_norm) + 1e-12
    for k in once:
        np.testing.assert_allclose(once[k], twice[k], atol=1e-12)


def test_clip_rejects_bad_max_norm():
    with pytest.raises(ValueError):
        nn_core.clip_global_norm({"g": np.ones(2)}, 0.0)


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_first_step_hand_value():
    theta = {"w": np.array([1.0])}
    state = nn_core.adamw_init(theta, lr=0.01)
    nn_core.adamw_step(state, theta, {"w": np.array([0.5])})
    # bias correction makes the first update lr * g / (|g| + eps)
    np.testing.assert_allclose(theta["w"], [1.0 - 0.01 * 0.5 / (0.5 + 1e-8)],
                               atol=1e-12)
    assert abs(theta["w"][0] - 0.99) < 1e-8
    assert state.step == 1


def test_adamw_zero_grad_zero_decay_is_noop():
    theta = {"w": np.array([2.0, -3.0])}
    state = nn_core.adamw_init(theta, lr=0.5)
    nn_core.adamw_step(state, theta, {"w": np.zeros(2)})
    np.testing.assert_array_equal(theta["w"], [2.0, -3.0])


def test_adamw_decoupled_decay():
    theta = {"w": np.array([2.0])}
    state = nn_core.adamw_init(theta, lr=0.1, weight_decay=0.5)
    nn_core.adamw_step(state, theta, {"w": np.zeros(1)})
    np.testing.assert_allclose(theta["w"], [2.0 * (1 - 0.1 * 0.5)], atol=1e-15)


def test_adamw_zero_lr_is_noop():
    theta = {"w": np.array([1.5])}
    state = nn_core.adamw_init(theta, lr=0.0, weight_decay=0.1)
    nn_core.adamw_step(state, theta, {"w": np.array([7.0])})
    np.testing.assert_array_equal(theta["w"], [1.5])


def test_adamw_multi_step_matches_reference_loop():
    # independent transcription of bias-corrected Adam + decoupled decay
    rng = _rng(12)
    grads_seq = [rng.standard_normal(4) for _ in range(5)]
    lr, wd, b1, b2, eps = 0.05, 0.02, 0.9, 0.999, 1e-8

    ref = np.array([1.0, -2.0, 0.5, 3.0])
    m = np.zeros(4)
    v = np.zeros(4)
    for t, g in enumerate(grads_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        ref = ref - lr * mhat / (np.sqrt(vhat) + eps)
        ref = ref - lr * wd * ref

    theta = {"w": np.array([1.0, -2.0, 0.5, 3.0])}
    state = nn_core.adamw_init(theta, lr=lr, weight_decay=wd)
    for g in grads_seq:
        nn_core.adamw_step(state, theta, {"w": g})
    np.testing.assert_allclose(theta["w"], ref, atol=1e-13)


def test_adamw_rejects_mismatched_names_and_shapes():
    theta = {"w": np.ones(2)}
    state = nn_core.adamw_init(theta, lr=0.1)
    with pytest.raises(ValueError):
        nn_core.adamw_step(state, theta, {"other": np.ones(2)})
    with pytest.raises(ValueError):
        nn_core.adamw_step(state, theta, {"w": np.ones(3)})


# ---------------------------------------------------------------------------
# Gradient checking machinery


def test_relative_errors_floor():
    # both magnitudes under the floor count as exact agreement
    errs = nn_core.relative_errors(np.array([0.0, 1e-12, 1.0]),
                                   np.array([5e-13, 0.0, 2.0]))
    np.testing.assert_allclose(errs, [0.0, 0.0, 0.5], atol=1e-15)


def test_grad_check_linear_model_tight():
    rng = _rng(13)
    p = nn_core.init_linear(rng, 4, 3)
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((5, 3))
    tensors = {"weight": p.weight, "bias": p.bias}

    def loss():
        return float(np.sum(nn_core.linear_apply(p, x) * w))

    def grads():
        _, dw, db = nn_core.linear_backward(p, x, w)
        return {"weight": dw, "bias": db}

    report = nn_core.grad_check(loss, grads, tensors, tolerance=1e-6)
    assert report.passed
    assert report.max_relative_error < 1e-6


def test_grad_check_detects_corruption():
    rng = _rng(14)
    p = nn_core.init_linear(rng, 3, 2)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((4, 2))
    tensors = {"weight": p.weight, "bias": p.bias}

    def loss():
        return float(np.sum(nn_core.linear_apply(p, x) * w))

    def corrupted():
        _, dw, db = nn_core.linear_backward(p, x, w)
        dw = dw.copy()
        dw[0, 0] += 0.1
        return {"weight": dw, "bias": db}

    report = nn_core.grad_check(loss, corrupted, tensors, tolerance=1e-4)
    assert not report.passed
    assert "weight" in str(report)


def test_fd_restores_parameters():
    rng = _rng(15)
    tensors = {"w": rng.standard_normal(3)}
    snapshot = tensors["w"].copy()
    nn_core.finite_difference_gradients(lambda: float(np.sum(tensors["w"] ** 2)),
                                        tensors)
    np.testing.assert_array_equal(tensors["w"], snapshot)

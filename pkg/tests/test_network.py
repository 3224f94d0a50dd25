import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdcr.errors import (ChecksumError, InvalidInputError, MagicMismatchError, ShapeMismatchError,
                         TruncatedFileError, WeightFileError)
from tdcr.network import (AdamState, NetworkSpec, adam_step, backward, forward, init_xavier,
                          load_weights, save_weights)
from tdcr.training import batch_loss

TINY = NetworkSpec(input_dim=2, hidden_dims=(3, 4, 5, 6), M=4)


def test_spec_validation():
    assert NetworkSpec().output_dim == 1536
    assert NetworkSpec().layer_dims == (8, 128, 256, 512, 1024, 1536)
    with pytest.raises(InvalidInputError):
        NetworkSpec(hidden_dims=(64, 64))
    with pytest.raises(InvalidInputError):
        NetworkSpec(M=0)


def test_xavier_init():
    spec = NetworkSpec(8, (128, 256), 64)
    w = init_xavier(spec, seed=0)
    assert all(not b.any() for b in w.b)
    assert all(np.array_equal(g, np.ones_like(g)) for g in w.gamma)
    for W, (fan_in, fan_out) in zip(w.W, zip(spec.layer_dims[:-1], spec.layer_dims[1:])):
        bound = np.sqrt(6 / (fan_in + fan_out))
        assert np.abs(W).max() <= bound
        assert abs(W.std() / (bound / np.sqrt(3)) - 1) < 0.1
    again = init_xavier(spec, seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(w.W, again.W))


def test_forward_shapes_and_zero_weights():
    w = init_xavier(TINY, 1)
    out = forward(w, np.zeros((5, 2)))
    assert out.shape == (5, 4, 3)
    for W in w.W:
        W[...] = 0
    assert not forward(w, np.random.default_rng(0).normal(size=(3, 2))).any()
    with pytest.raises(InvalidInputError):
        forward(w, np.zeros((2, 7)))


def test_training_batch_of_one_rejected():
    w = init_xavier(TINY, 1)
    with pytest.raises(InvalidInputError):
        forward(w, np.zeros((1, 2)), training=True)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_inference_is_row_independent(seed):
    rng = np.random.default_rng(seed)
    w = init_xavier(TINY, seed)
    for i in range(4):
        w.running_mean[i] = rng.normal(size=w.running_mean[i].shape)
        w.running_var[i] = rng.uniform(0.5, 2, size=w.running_var[i].shape)
    x = rng.normal(size=(6, 2))
    batch = forward(w, x)
    for i in range(6):
        np.testing.assert_allclose(forward(w, x[i]), batch[i:i + 1], rtol=1e-12, atol=1e-15)
    assert np.array_equal(forward(w, x), batch)


def test_running_statistics_update():
    w = init_xavier(TINY, 2)
    x = np.random.default_rng(3).normal(size=(10, 2))
    z = x @ w.W[0] + w.b[0]
    forward(w, x, training=True)
    np.testing.assert_allclose(w.running_mean[0], 0.1 * z.mean(0), rtol=1e-12)
    np.testing.assert_allclose(w.running_var[0], 0.9 + 0.1 * z.var(0, ddof=1), rtol=1e-12)
    before = [m.copy() for m in w.running_mean]
    forward(w, x, training=True, update_stats=False)
    assert all(np.array_equal(a, b) for a, b in zip(before, w.running_mean))


def _numeric_grads(w, x, y, loss, lam, h=1e-6):
    def value():
        pred = forward(w, x, training=True, update_stats=False)
        return batch_loss(pred, y, loss, lam, with_grad=False)

    out = {}
    for name, arr in w.params().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = value()
            arr[idx] = old - h
            down = value()
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


@pytest.mark.parametrize("loss,lam", [("chamfer-emd", 1.0), ("chamfer-emd", 0.0), ("mse", 1.0)])
def test_backward_matches_finite_differences(loss, lam):
    rng = np.random.default_rng(4)
    w = init_xavier(TINY, 5)
    # A random output bias keeps predicted points distinct even when a row's
    # activations are all zero, so nearest-neighbor pairings have no ties.
    w.b[-1] = rng.normal(size=w.b[-1].shape)
    x = rng.normal(size=(3, 2))
    y = rng.normal(size=(3, 4, 3))
    pred, cache = forward(w, x, training=True, update_stats=False, return_cache=True)
    _, grad = batch_loss(pred, y, loss, lam)
    analytic = backward(w, cache, grad)
    numeric = _numeric_grads(w, x, y, loss, lam)
    assert analytic.keys() == numeric.keys()
    for name in analytic:
        np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-7, err_msg=name)


def test_perfect_prediction_has_zero_gradient():
    rng = np.random.default_rng(5)
    w = init_xavier(TINY, 6)
    w.b[-1] = rng.normal(size=w.b[-1].shape)
    x = rng.normal(size=(3, 2))
    pred, cache = forward(w, x, training=True, update_stats=False, return_cache=True)
    _, grad = batch_loss(pred, pred.copy(), "chamfer-emd", 1.0)
    assert not grad.any()
    assert all(not g.any() for g in backward(w, cache, grad).values())


def test_gradients_scale_with_loss():
    rng = np.random.default_rng(6)
    w = init_xavier(TINY, 7)
    x = rng.normal(size=(3, 2))
    _, cache = forward(w, x, training=True, update_stats=False, return_cache=True)
    g = rng.normal(size=(3, 4, 3))
    one = backward(w, cache, g)
    two = backward(w, cache, 2.5 * g)
    for name in one:
        np.testing.assert_allclose(two[name], 2.5 * one[name], rtol=1e-12, atol=1e-12)


def test_adam_zero_gradient_is_noop():
    w = init_xavier(TINY, 8)
    before = {k: v.copy() for k, v in w.params().items()}
    adam_step(w, {k: np.zeros_like(v) for k, v in before.items()}, AdamState(), lr=0.01)
    assert all(np.array_equal(before[k], v) for k, v in w.params().items())


def test_adam_matches_reference():
    rng = np.random.default_rng(9)
    w = init_xavier(TINY, 9)
    ref = {k: v.copy() for k, v in w.params().items()}
    m = {k: np.zeros_like(v) for k, v in ref.items()}
    v2 = {k: np.zeros_like(v) for k, v in ref.items()}
    state = AdamState()
    for t in range(1, 6):
        grads = {k: rng.normal(size=v.shape) for k, v in ref.items()}
        adam_step(w, grads, state, lr=0.01)
        for k, g in grads.items():
            m[k] = 0.9 * m[k] + 0.1 * g
            v2[k] = 0.999 * v2[k] + 0.001 * g * g
            ref[k] -= 0.01 * (m[k] / (1 - 0.9 ** t)) / (np.sqrt(v2[k] / (1 - 0.999 ** t)) + 1e-8)
        if t == 1:
            # First bias-corrected step moves every coordinate by about lr.
            delta = np.abs(w.W[0] - init_xavier(TINY, 9).W[0])
            np.testing.assert_allclose(delta, 0.01, rtol=1e-5)
    for k, v in w.params().items():
        np.testing.assert_allclose(v, ref[k], rtol=1e-12, atol=1e-15)


@pytest.fixture
def saved(tmp_path):
    w = init_xavier(TINY, 10)
    forward(w, np.random.default_rng(0).normal(size=(4, 2)), training=True)
    path = tmp_path / "w.bin"
    save_weights(w, path)
    return w, path


def test_weights_round_trip(saved):
    w, path = saved
    got = load_weights(path, TINY)
    x = np.random.default_rng(1).normal(size=(3, 2))
    assert np.array_equal(forward(got, x), forward(w.eval(), x))
    assert not got.training
    assert path.read_bytes()[:8] == b"TDCRNET1"


def test_weights_bad_magic(saved):
    _, path = saved
    path.write_bytes(b"NOTANET1" + path.read_bytes()[8:])
    with pytest.raises(MagicMismatchError):
        load_weights(path)


def test_weights_shape_mismatch(saved):
    _, path = saved
    with pytest.raises(ShapeMismatchError):
        load_weights(path, NetworkSpec(2, (3, 4, 5, 7), 4))


def test_weights_truncated(saved):
    _, path = saved
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(TruncatedFileError):
        load_weights(path)


def test_weights_trailing_bytes(saved):
    _, path = saved
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(WeightFileError):
        load_weights(path)


def test_weights_checksum(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_weights(path)


def test_weights_nonpositive_variance(saved):
    w, path = saved
    w.running_var[0][0] = 0.0
    save_weights(w, path)
    with pytest.raises(WeightFileError, match="variance"):
        load_weights(path)


def test_weight_header_layout(saved):
    _, path = saved
    blob = path.read_bytes()
    assert struct.unpack("<II", blob[8:16]) == (2, 5)
    assert struct.unpack("<5I", blob[16:36]) == (3, 4, 5, 6, 12)
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[8:-4])

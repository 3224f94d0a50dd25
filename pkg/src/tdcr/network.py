"""Fully-connected point-cloud decoder with batch normalization, in numpy.

Hidden layers apply affine -> batch norm -> ReLU; the output layer is affine
and its 3M outputs are read as M consecutive (x, y, z) triples.
"""

from __future__ import annotations

import copy
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ChecksumError, InvalidInputError, MagicMismatchError, ShapeMismatchError,
                     TruncatedFileError, WeightFileError)

MAGIC = b"TDCRNET1"
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 8
    hidden_dims: tuple = (128, 256, 512, 1024)
    M: int = 512

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim,) + self.hidden_dims + (self.M,)
        if any(d < 1 for d in dims):
            raise InvalidInputError(f"all layer sizes must be positive: {dims}")
        if any(b <= a for a, b in zip(self.hidden_dims, self.hidden_dims[1:])):
            raise InvalidInputError(f"hidden sizes must strictly increase: {self.hidden_dims}")

    @property
    def output_dim(self):
        return 3 * self.M

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden_dims + (self.output_dim,)


@dataclass
class NetworkWeights:
    spec: NetworkSpec
    W: list
    b: list
    gamma: list
    beta: list
    running_mean: list
    running_var: list
    training: bool = False
    bn_eps: float = BN_EPS
    bn_momentum: float = BN_MOMENTUM

    def params(self):
        """Trainable arrays keyed by name; the arrays are the live storage."""
        out = {}
        n_hidden = len(self.spec.hidden_dims)
        for i in range(n_hidden + 1):
            out[f"W{i}"] = self.W[i]
            out[f"b{i}"] = self.b[i]
            if i < n_hidden:
                out[f"gamma{i}"] = self.gamma[i]
                out[f"beta{i}"] = self.beta[i]
        return out

    def copy(self):
        return copy.deepcopy(self)

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self


def init_xavier(spec, seed):
    """Uniform Xavier weights, zero biases, identity batch-norm."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    W, b = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b.append(np.zeros(fan_out))
    hidden = spec.hidden_dims
    return NetworkWeights(spec, W, b,
                          gamma=[np.ones(h) for h in hidden], beta=[np.zeros(h) for h in hidden],
                          running_mean=[np.zeros(h) for h in hidden],
                          running_var=[np.ones(h) for h in hidden])


def forward(w, batch, training=None, update_stats=True, return_cache=False):
    """Map a (B, input_dim) batch to (B, M, 3) clouds.

    Training mode normalizes with batch statistics (B >= 2) and, unless
    ``update_stats`` is False, folds them into the running statistics.
    """
    training = w.training if training is None else training
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != w.spec.input_dim:
        raise InvalidInputError(f"expected input width {w.spec.input_dim}, got shape {x.shape}")
    if training and x.shape[0] < 2:
        raise InvalidInputError("training-mode batch norm needs at least 2 rows")
    cache = []
    a = x
    for i in range(len(w.spec.hidden_dims)):
        z = a @ w.W[i] + w.b[i]
        if training:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                n = z.shape[0]
                m = w.bn_momentum
                w.running_mean[i] = (1 - m) * w.running_mean[i] + m * mean
                w.running_var[i] = (1 - m) * w.running_var[i] + m * var * n / (n - 1)
        else:
            mean, var = w.running_mean[i], w.running_var[i]
        inv_std = 1.0 / np.sqrt(var + w.bn_eps)
        xhat = (z - mean) * inv_std
        y = w.gamma[i] * xhat + w.beta[i]
        cache.append((a, xhat, inv_std, y))
        a = np.maximum(y, 0.0)
    out = a @ w.W[-1] + w.b[-1]
    clouds = out.reshape(x.shape[0], w.spec.M, 3)
    if return_cache:
        return clouds, (cache, a)
    return clouds


def backward(w, cache, grad_out):
    """Gradients of a scalar loss w.r.t. every trainable parameter.

    ``grad_out`` is dL/d(clouds) with shape (B, M, 3); ``cache`` comes from a
    training-mode ``forward``.
    """
    layers, a_last = cache
    g = np.asarray(grad_out, dtype=float).reshape(a_last.shape[0], -1)
    n_hidden = len(w.spec.hidden_dims)
    grads = {f"W{n_hidden}": a_last.T @ g, f"b{n_hidden}": g.sum(axis=0)}
    g = g @ w.W[-1].T
    for i in reversed(range(n_hidden)):
        a_prev, xhat, inv_std, y = layers[i]
        g = g * (y > 0)
        grads[f"gamma{i}"] = (g * xhat).sum(axis=0)
        grads[f"beta{i}"] = g.sum(axis=0)
        dxhat = g * w.gamma[i]
        n = dxhat.shape[0]
        dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        grads[f"W{i}"] = a_prev.T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        g = dz @ w.W[i].T
    return grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(w, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place. Running batch-norm
    statistics are left alone."""
    state.t += 1
    t = state.t
    bc1 = 1 - beta1 ** t
    bc2 = 1 - beta2 ** t
    params = w.params()
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        tmp = np.multiply(g, 1 - beta1)
        m *= beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1 - beta2
        v *= beta2
        v += tmp
        # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / bc1
        params[name] -= tmp
    return w, state


def _layer_arrays(w):
    for i in range(len(w.spec.hidden_dims)):
        yield from (w.W[i], w.b[i], w.gamma[i], w.beta[i], w.running_mean[i], w.running_var[i])
    yield w.W[-1]
    yield w.b[-1]


def save_weights(w, path):
    dims = w.spec.layer_dims
    payload = bytearray(struct.pack("<II", dims[0], len(dims) - 1))
    payload += struct.pack(f"<{len(dims) - 1}I", *dims[1:])
    for arr in _layer_arrays(w):
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob = MAGIC + bytes(payload) + struct.pack("<I", zlib.crc32(payload))
    Path(path).write_bytes(blob)


def load_weights(path, spec=None):
    """Read a weight file, optionally checking it against ``spec``."""
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise MagicMismatchError(f"{path}: not a decoder weight file")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedFileError(f"{path}: file ends at byte {len(blob)}, needed {pos + n}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    input_dim, n_layers = struct.unpack("<II", take(8))
    if n_layers < 1 or n_layers > 64:
        raise WeightFileError(f"{path}: implausible layer count {n_layers}")
    dims = struct.unpack(f"<{n_layers}I", take(4 * n_layers))
    if dims[-1] % 3:
        raise WeightFileError(f"{path}: output width {dims[-1]} is not a multiple of 3")
    file_spec = NetworkSpec(input_dim, tuple(dims[:-1]), dims[-1] // 3)
    if spec is not None and spec.layer_dims != file_spec.layer_dims:
        raise ShapeMismatchError(f"{path}: file holds layers {file_spec.layer_dims}, "
                                 f"expected {spec.layer_dims}")

    def array(shape):
        n = int(np.prod(shape))
        return np.frombuffer(take(8 * n), dtype="<f8").astype(float).reshape(shape)

    all_dims = file_spec.layer_dims
    W, b, gamma, beta, mean, var = [], [], [], [], [], []
    for fan_in, fan_out in zip(all_dims[:-2], all_dims[1:-1]):
        W.append(array((fan_in, fan_out)))
        b.append(array((fan_out,)))
        gamma.append(array((fan_out,)))
        beta.append(array((fan_out,)))
        mean.append(array((fan_out,)))
        var.append(array((fan_out,)))
    W.append(array((all_dims[-2], all_dims[-1])))
    b.append(array((all_dims[-1],)))
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(blob):
        raise WeightFileError(f"{path}: {len(blob) - pos} trailing bytes")
    if zlib.crc32(blob[len(MAGIC):pos - 4]) != crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    if any(np.any(v <= 0) for v in var):
        raise WeightFileError(f"{path}: nonpositive running variance")
    return NetworkWeights(file_spec, W, b, gamma, beta, mean, var, training=False)

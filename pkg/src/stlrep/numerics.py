"""Layer primitives, SGD, symmetric eigendecomposition and seeded random streams.

Tensors are plain float64 numpy arrays in channels-last layout: images are
``(H, W, C)`` and batches ``(N, H, W, C)``. Convolution kernels are
``(kh, kw, C_in, C_out)``; dense weights are ``(out, in)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ._kernels import active as _k


class RandomStream:
    """Seeded, platform-independent random stream (PCG64 behind a SeedSequence).

    Child streams are derived from a purpose string and an index, so work can
    be split across processes without perturbing any other stream.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if int(seed) < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, purpose: str, index: int = 0) -> "RandomStream":
        tag = int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:4], "little")
        return RandomStream(self.seed, self.key + (tag, int(index)))

    def uniform_int(self, lo: int, hi: int) -> int:
        """Integer drawn uniformly from ``[lo, hi]`` (both inclusive)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return int(self._gen.integers(lo, hi, endpoint=True))

    def integers(self, lo, hi, size=None):
        """Integers in ``[lo, hi)``."""
        return self._gen.integers(lo, hi, size=size)

    def gaussian(self, mean=0.0, std=1.0, size=None):
        return self._gen.normal(mean, std, size=size)

    def uniform(self, lo=0.0, hi=1.0, size=None):
        return self._gen.uniform(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, items) -> list:
        """Return a shuffled copy of ``items``."""
        items = list(items)
        return [items[i] for i in self._gen.permutation(len(items))]

    def sample_without_replacement(self, population: int, k: int) -> np.ndarray:
        if k > population:
            raise ValueError(f"cannot draw {k} distinct values from {population}")
        return self._gen.choice(population, size=k, replace=False)


def rng_uniform_int(stream: RandomStream, lo: int, hi: int) -> int:
    return stream.uniform_int(lo, hi)


def rng_gaussian(stream: RandomStream, mean: float = 0.0, std: float = 1.0) -> float:
    return float(stream.gaussian(mean, std))


def rng_shuffle(stream: RandomStream, items) -> list:
    return stream.shuffle(items)


@dataclass
class LayerGradients:
    params: dict = field(default_factory=dict)
    input: np.ndarray | None = None


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return np.ascontiguousarray(x[None]), True
    if x.ndim == 4:
        return np.ascontiguousarray(x), False
    raise ValueError(f"expected (H,W,C) or (N,H,W,C) input, got shape {x.shape}")


def _conv_padding(h, w, kh, kw, stride, padding):
    if padding == "valid":
        return 0, 0, 0, 0
    if padding != "same":
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    ho = -(-h // stride)
    wo = -(-w // stride)
    ph = max((ho - 1) * stride + kh - h, 0)
    pw = max((wo - 1) * stride + kw - w, 0)
    return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


def _check_conv(x, kernels, stride, padding):
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be (kh,kw,C,F), got shape {kernels.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, h, w, c = x.shape
    kh, kw, kc, _ = kernels.shape
    if kc != c:
        raise ValueError(f"kernel expects {kc} input channels, input has {c}")
    pads = _conv_padding(h, w, kh, kw, stride, padding)
    if kh > h + pads[0] + pads[1] or kw > w + pads[2] + pads[3]:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    return kernels, pads


def conv2d_forward(x, kernels, bias=None, stride: int = 1, padding: str = "same"):
    """2-D cross-correlation of ``x`` with ``kernels`` plus optional per-filter bias."""
    xb, single = _as_batch(x)
    kernels, (t, b, l, r) = _check_conv(xb, kernels, stride, padding)
    xp = np.pad(xb, ((0, 0), (t, b), (l, r), (0, 0))) if (t or b or l or r) else xb
    out = _k.conv2d_forward(np.ascontiguousarray(xp), kernels, int(stride))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out[0] if single else out


def conv2d_backward(x, kernels, upstream, stride: int = 1, padding: str = "same") -> LayerGradients:
    xb, single = _as_batch(x)
    kernels, (t, b, l, r) = _check_conv(xb, kernels, stride, padding)
    ub, _ = _as_batch(upstream)
    kh, kw, _, f = kernels.shape
    expected = (
        (xb.shape[1] + t + b - kh) // stride + 1,
        (xb.shape[2] + l + r - kw) // stride + 1,
        f,
    )
    if ub.shape[0] != xb.shape[0] or ub.shape[1:] != expected:
        raise ValueError(f"upstream gradient shape {ub.shape[1:]} != forward output shape {expected}")
    xp = np.pad(xb, ((0, 0), (t, b), (l, r), (0, 0))) if (t or b or l or r) else xb
    dxp, dk = _k.conv2d_backward(np.ascontiguousarray(xp), kernels, ub, int(stride))
    h, w = xb.shape[1:3]
    dx = dxp[:, t : t + h, l : l + w, :]
    return LayerGradients(
        params={"kernels": dk, "bias": ub.sum(axis=(0, 1, 2))},
        input=dx[0] if single else np.ascontiguousarray(dx),
    )


@dataclass(frozen=True)
class PoolIndices:
    argmax: np.ndarray
    input_shape: tuple
    single: bool


def maxpool2x2_forward(x):
    """2x2/stride-2 max pool. Odd spatial sizes are padded with -inf.

    Returns (pooled, indices); ties route to the first row-major position.
    """
    xb, single = _as_batch(x)
    n, h, w, c = xb.shape
    if h % 2 or w % 2:
        xb = np.pad(xb, ((0, 0), (0, h % 2), (0, w % 2), (0, 0)), constant_values=-np.inf)
    out, idx = _k.maxpool2x2_forward(np.ascontiguousarray(xb))
    ind = PoolIndices(idx, (h, w), single)
    return (out[0] if single else out), ind


def maxpool2x2_backward(indices: PoolIndices, upstream):
    ub, _ = _as_batch(upstream)
    if ub.shape != indices.argmax.shape:
        raise ValueError(f"upstream shape {ub.shape} != pooled shape {indices.argmax.shape}")
    dx = _k.maxpool2x2_backward(indices.argmax, ub)
    h, w = indices.input_shape
    dx = np.ascontiguousarray(dx[:, :h, :w, :])
    return dx[0] if indices.single else dx


def upsample2x_forward(x):
    """Nearest-neighbour 2x upsampling of (N,H,W,C)."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2x_backward(upstream):
    n, h, w, c = upstream.shape
    return upstream.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def dense_forward(x, weights, bias):
    """Affine map ``x @ weights.T + bias`` for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if x.shape[-1] != weights.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} != weight input width {weights.shape[1]}")
    return x @ weights.T + bias


def dense_backward(x, weights, upstream) -> LayerGradients:
    x = np.asarray(x, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    x2 = np.atleast_2d(x)
    u2 = np.atleast_2d(up)
    return LayerGradients(
        params={"weights": u2.T @ x2, "bias": u2.sum(axis=0)},
        input=(up @ weights),
    )


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    # subgradient at exactly 0 is 0
    return np.where(np.asarray(x) > 0.0, upstream, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, upstream):
    """Gradient through a sigmoid given its output ``y``."""
    return upstream * y * (1.0 - y)


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_backward(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - target) / pred.size


def sgd_step(params, grads, learning_rate: float):
    """Plain SGD update ``p - lr * g``; accepts arrays or dicts of arrays."""
    if isinstance(params, dict):
        return {k: params[k] - learning_rate * grads[k] for k in params}
    return np.asarray(params) - learning_rate * np.asarray(grads)


def glorot_uniform(stream: RandomStream, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return stream.uniform(-limit, limit, size=shape)


def sym_eig(matrix, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in non-increasing order and the matching orthonormal
    eigenvectors as columns. Each eigenvector's largest-magnitude entry is
    made positive so results are reproducible.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite values")
    if a.size and np.max(np.abs(a - a.T)) > 1e-9 * max(1.0, np.max(np.abs(a))):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    vals, vecs, _ = _k.jacobi_eigh(np.ascontiguousarray(a), tol, max_sweeps)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    if vecs.size:
        pivot = np.argmax(np.abs(vecs), axis=0)
        signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
        signs[signs == 0] = 1.0
        vecs = vecs * signs
    return vals, np.ascontiguousarray(vecs)

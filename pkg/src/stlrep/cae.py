"""Convolutional autoencoders trained from scratch with mini-batch SGD.

Encoder: ``depth`` blocks of (3x3 same conv -> ReLU -> 2x2 max pool), then a
dense layer to the latent vector with ReLU. Decoder: dense back to the
pooled volume with ReLU, then mirrored blocks of (2x nearest upsample ->
3x3 conv), ReLU between blocks and a per-pixel sigmoid at the output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import container
from .numerics import (
    RandomStream,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    glorot_uniform,
    maxpool2x2_backward,
    maxpool2x2_forward,
    mse,
    mse_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    upsample2x_backward,
    upsample2x_forward,
)

BASE_FILTERS = (16, 32, 64, 128)
LATENT_SIZES = (150, 200, 250, 300, 400, 500, 1000, 1500, 2000, 2500)


def default_filters(depth: int) -> tuple[int, ...]:
    """Filter counts per encoder block; blocks past the fourth repeat 128."""
    return tuple(BASE_FILTERS[min(i, len(BASE_FILTERS) - 1)] for i in range(depth))


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    depth: int = 5
    latent_size: int = 2500
    filters: tuple = default_filters(5)
    kernel: int = 3
    input_shape: tuple = (96, 96, 1)
    epochs: int = 20
    learning_rate: float = 0.01
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))

    def validate(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.latent_size < 1:
            raise ValueError(f"latent_size must be >= 1, got {self.latent_size}")
        if len(self.filters) != self.depth:
            raise ValueError(f"filters has {len(self.filters)} entries for depth {self.depth}")
        if any(f < 1 for f in self.filters):
            raise ValueError(f"filter counts must be positive: {self.filters}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (H, W, C), got {self.input_shape}")
        h, w, _ = self.input_shape
        step = 2**self.depth
        if h % step or w % step:
            raise ValueError(f"input {h}x{w} is not divisible by 2^{self.depth}={step}")
        if self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate >= 0 required")
        if not 0 <= self.seed <= 1000:
            raise ValueError(f"seed must lie in [0, 1000], got {self.seed}")
        return self

    @property
    def bottleneck_shape(self):
        h, w, _ = self.input_shape
        return (h >> self.depth, w >> self.depth, self.filters[-1])

    def to_dict(self):
        d = asdict(self)
        d["filters"] = list(self.filters)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class CaeModel:
    spec: ArchitectureSpec
    params: dict
    loss_history: list = field(default_factory=list)

    def copy(self):
        return CaeModel(self.spec, {k: v.copy() for k, v in self.params.items()}, list(self.loss_history))

    def encoder(self) -> "EncoderModel":
        names = [f"enc{i}.{p}" for i in range(self.spec.depth) for p in ("kernels", "bias")]
        names += ["latent.weights", "latent.bias"]
        return EncoderModel(self.spec, {n: self.params[n] for n in names})


@dataclass
class EncoderModel:
    spec: ArchitectureSpec
    params: dict

    @property
    def latent_size(self):
        return self.spec.latent_size


def build_architecture(spec: ArchitectureSpec) -> CaeModel:
    """Allocate and initialise every layer from ``spec.seed``."""
    spec.validate()
    stream = RandomStream(spec.seed).child("cae-init")
    k = spec.kernel
    channels = spec.input_shape[2]
    params = {}
    c_in = channels
    for i, f in enumerate(spec.filters):
        params[f"enc{i}.kernels"] = glorot_uniform(stream, (k, k, c_in, f), k * k * c_in, k * k * f)
        params[f"enc{i}.bias"] = np.zeros(f)
        c_in = f
    flat = int(np.prod(spec.bottleneck_shape))
    params["latent.weights"] = glorot_uniform(stream, (spec.latent_size, flat), flat, spec.latent_size)
    params["latent.bias"] = np.zeros(spec.latent_size)
    params["decode.weights"] = glorot_uniform(stream, (flat, spec.latent_size), spec.latent_size, flat)
    params["decode.bias"] = np.zeros(flat)
    for j in range(spec.depth):
        i = spec.depth - 1 - j
        c_in = spec.filters[i]
        c_out = spec.filters[i - 1] if i > 0 else channels
        params[f"dec{j}.kernels"] = glorot_uniform(stream, (k, k, c_in, c_out), k * k * c_in, k * k * c_out)
        params[f"dec{j}.bias"] = np.zeros(c_out)
    return CaeModel(spec, params)


def _encode_batch(spec, params, x, cache=None):
    a = x
    for i in range(spec.depth):
        z = conv2d_forward(a, params[f"enc{i}.kernels"], params[f"enc{i}.bias"])
        r = relu(z)
        p, ind = maxpool2x2_forward(r)
        if cache is not None:
            cache.append((a, z, ind))
        a = p
    flat = a.reshape(a.shape[0], -1)
    zl = dense_forward(flat, params["latent.weights"], params["latent.bias"])
    if cache is not None:
        cache.append((flat, zl, a.shape))
    return relu(zl)


def _forward(spec, params, x):
    enc_cache = []
    latent = _encode_batch(spec, params, x, enc_cache)
    zd = dense_forward(latent, params["decode.weights"], params["decode.bias"])
    h = relu(zd).reshape((x.shape[0],) + spec.bottleneck_shape)
    dec_cache = []
    for j in range(spec.depth):
        u = upsample2x_forward(h)
        z = conv2d_forward(u, params[f"dec{j}.kernels"], params[f"dec{j}.bias"])
        dec_cache.append((u, z))
        h = relu(z) if j < spec.depth - 1 else sigmoid(z)
    return h, (enc_cache, latent, zd, dec_cache)


def _backward(spec, params, y, target, caches):
    enc_cache, latent, zd, dec_cache = caches
    grads = {}
    g = mse_backward(y, target)
    g = sigmoid_backward(y, g)
    for j in reversed(range(spec.depth)):
        u, z = dec_cache[j]
        if j < spec.depth - 1:
            g = relu_backward(z, g)
        lg = conv2d_backward(u, params[f"dec{j}.kernels"], g)
        grads[f"dec{j}.kernels"] = lg.params["kernels"]
        grads[f"dec{j}.bias"] = lg.params["bias"]
        g = upsample2x_backward(lg.input)
    g = relu_backward(zd, g.reshape(g.shape[0], -1))
    lg = dense_backward(latent, params["decode.weights"], g)
    grads["decode.weights"] = lg.params["weights"]
    grads["decode.bias"] = lg.params["bias"]
    flat, zl, pooled_shape = enc_cache[-1]
    g = relu_backward(zl, lg.input)
    lg = dense_backward(flat, params["latent.weights"], g)
    grads["latent.weights"] = lg.params["weights"]
    grads["latent.bias"] = lg.params["bias"]
    g = lg.input.reshape(pooled_shape)
    for i in reversed(range(spec.depth)):
        a, z, ind = enc_cache[i]
        g = relu_backward(z, maxpool2x2_backward(ind, g))
        lg = conv2d_backward(a, params[f"enc{i}.kernels"], g)
        grads[f"enc{i}.kernels"] = lg.params["kernels"]
        grads[f"enc{i}.bias"] = lg.params["bias"]
        g = lg.input
    return grads


def loss_and_gradients(model: CaeModel, batch):
    """Reconstruction MSE of ``batch`` and the gradient of every parameter."""
    x = np.asarray(batch, dtype=np.float64)
    y, caches = _forward(model.spec, model.params, x)
    return mse(y, x), _backward(model.spec, model.params, y, x, caches)


def reconstruct(model: CaeModel, images):
    x = _check_images(model.spec, images)
    return _forward(model.spec, model.params, x)[0]


def _check_images(spec, images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != spec.input_shape:
        raise ValueError(f"images of shape {tuple(x.shape[1:])} do not match input_shape {spec.input_shape}")
    return np.ascontiguousarray(x)


def train(model: CaeModel, images, spec: ArchitectureSpec | None = None) -> CaeModel:
    """Train a copy of ``model`` on ``images`` (N,H,W,C) in [0, 1].

    The sample order is reshuffled every epoch from a stream derived from the
    spec's seed, so the result depends only on (spec, images).
    """
    spec = spec or model.spec
    x = _check_images(spec, images)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    out = model.copy()
    out.spec = spec
    params = out.params
    order_stream = RandomStream(spec.seed).child("cae-shuffle")
    n = x.shape[0]
    for epoch in range(spec.epochs):
        perm = order_stream.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            batch = x[perm[start : start + spec.batch_size]]
            y, caches = _forward(spec, params, batch)
            loss = mse(y, batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch starting at {start}")
            grads = _backward(spec, params, y, batch, caches)
            if spec.learning_rate:
                for name, g in grads.items():
                    params[name] -= spec.learning_rate * g
            total += loss * batch.shape[0]
        out.loss_history.append(total / n)
    return out


def encode(encoder: EncoderModel | CaeModel, image):
    """Latent vector of one (H,W,C) image."""
    vec = encode_batch(encoder, np.asarray(image)[None] if np.ndim(image) == 3 else image)
    if vec.shape[0] != 1:
        raise ValueError("encode expects a single image; use encode_batch")
    return vec[0]


def encode_batch(encoder: EncoderModel | CaeModel, images, chunk: int = 64):
    if isinstance(encoder, CaeModel):
        encoder = encoder.encoder()
    x = _check_images(encoder.spec, images)
    parts = [_encode_batch(encoder.spec, encoder.params, x[i : i + chunk]) for i in range(0, x.shape[0], chunk)]
    out = np.concatenate(parts, axis=0) if parts else np.zeros((0, encoder.spec.latent_size))
    if not np.all(np.isfinite(out)):
        raise TrainingError("encoder produced non-finite activations")
    return out


def save_model(model: CaeModel | EncoderModel, path):
    kind = "cae" if isinstance(model, CaeModel) else "encoder"
    header = {"spec": model.spec.to_dict()}
    if isinstance(model, CaeModel):
        header["loss_history"] = list(model.loss_history)
    container.save(path, kind, header, model.params)


def load_model(path):
    kind, header, tensors = container.load(path, expected_kind=("cae", "encoder"))
    try:
        spec = ArchitectureSpec.from_dict(header["spec"])
    except (KeyError, TypeError) as exc:
        raise container.FormatError(f"corrupted header: bad architecture spec ({exc})") from exc
    if kind == "encoder":
        return EncoderModel(spec, tensors)
    return CaeModel(spec, tensors, list(header.get("loss_history", [])))


def with_seed(spec: ArchitectureSpec, seed: int) -> ArchitectureSpec:
    return replace(spec, seed=seed)

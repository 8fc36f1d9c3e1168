"""Labeled/unlabeled datasets, image preprocessing, encoder features and PCA."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cae import encode_batch
from .container import FormatError, VersionError
from .numerics import sym_eig


@dataclass
class LabeledDataset:
    images: np.ndarray  # (M, H, W, C)
    labels: np.ndarray  # class indices into class_names
    subject_ids: list
    class_names: list
    paths: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subject_ids = [str(s) for s in self.subject_ids]
        m = self.images.shape[0]
        if len(self.labels) != m or len(self.subject_ids) != m:
            raise ValueError("images, labels and subject ids must have equal length")
        if m and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label outside the class list")
        if any(not s for s in self.subject_ids):
            raise ValueError("every sample needs a non-empty subject id")

    def __len__(self):
        return self.images.shape[0]


@dataclass
class UnlabeledDataset:
    images: np.ndarray  # (N, H, W, C)
    dataset_id: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise ValueError(f"unlabeled dataset {self.dataset_id!r} is empty or not (N,H,W,C)")


def _bilinear(img, h, w):
    # half-pixel centres, edge clamped; img is (H, W)
    H, W = img.shape
    if (H, W) == (h, w):
        return img.copy()
    ys = np.clip((np.arange(h) + 0.5) * H / h - 0.5, 0, H - 1)
    xs = np.clip((np.arange(w) + 0.5) * W / w - 0.5, 0, W - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def _center_crop(img, h, w):
    H, W = img.shape
    target = h / w
    if abs(H / W - target) < 1e-9:
        return img
    if H / W > target:
        nh = max(1, round(W * target))
        top = (H - nh) // 2
        return img[top : top + nh]
    nw = max(1, round(H / target))
    left = (W - nw) // 2
    return img[:, left : left + nw]


LUMA = np.array([0.299, 0.587, 0.114])


def preprocess(image, target_shape=(96, 96), normalize=True):
    """Grayscale, centre-crop to the target aspect, bilinear resize, scale to [0, 1].

    Integer images are divided by their dtype maximum; float images are
    taken to be in [0, 1] already. Returns an (h, w, 1) float64 array.
    """
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (3, 4)):
        raise ValueError(f"expected a grayscale or RGB image, got shape {img.shape}")
    if np.issubdtype(img.dtype, np.integer):
        scale = float(np.iinfo(img.dtype).max) if normalize else 1.0
        img = img.astype(np.float64) / scale
    else:
        img = img.astype(np.float64)
    if img.ndim == 3:
        img = img[:, :, :3] @ LUMA
    h, w = int(target_shape[0]), int(target_shape[1])
    img = _bilinear(_center_crop(img, h, w), h, w)
    if normalize:
        img = np.clip(img, 0.0, 1.0)
    return img[:, :, None]


def load_image(path):
    """Decode an image file (PGM/PPM or anything Pillow reads) to an array."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return arr


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (M, width)
    labels: np.ndarray
    subject_ids: list
    class_names: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subject_ids = [str(s) for s in self.subject_ids]
        if self.values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got {self.values.shape}")
        if not (self.values.shape[0] == len(self.labels) == len(self.subject_ids)):
            raise ValueError("row, label and subject-id counts differ")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def width(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]


def extract_features(encoder, dataset: LabeledDataset, provenance=None) -> FeatureMatrix:
    """Latent activations of every labeled image, in dataset order."""
    if len(dataset) == 0:
        raise ValueError("labeled dataset is empty")
    expected = tuple(encoder.spec.input_shape)
    for i in range(len(dataset)):
        if tuple(dataset.images[i].shape) != expected:
            raise ValueError(f"sample {i}: shape {dataset.images[i].shape} != encoder input {expected}")
    values = encode_batch(encoder, dataset.images)
    return FeatureMatrix(values, dataset.labels.copy(), list(dataset.subject_ids), list(dataset.class_names),
                         dict(provenance or {}))


FEATURE_MAGIC = b"STLF"
FEATURE_VERSION = 1


def save_features(fm: FeatureMatrix, path):
    """Header JSON, then rows as <f8, labels as <i8, subject ids as JSON."""
    m, w = fm.values.shape
    header = json.dumps({"provenance": fm.provenance, "class_names": fm.class_names, "rows": m, "width": w},
                        sort_keys=True).encode("utf-8")
    ids = json.dumps(fm.subject_ids).encode("utf-8")
    blob = b"".join([
        FEATURE_MAGIC, struct.pack("<H", FEATURE_VERSION), struct.pack("<I", len(header)), header,
        np.ascontiguousarray(fm.values, dtype="<f8").tobytes(),
        np.ascontiguousarray(fm.labels, dtype="<i8").tobytes(),
        struct.pack("<I", len(ids)), ids,
    ])
    Path(path).write_bytes(blob)


def load_features(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a feature-matrix file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FEATURE_VERSION:
        raise VersionError(f"{path}: unsupported feature file version {version}")
    try:
        (hlen,) = struct.unpack_from("<I", data, 6)
        pos = 10
        header = json.loads(data[pos : pos + hlen])
        pos += hlen
        m, w = header["rows"], header["width"]
        values = np.frombuffer(data, dtype="<f8", count=m * w, offset=pos).reshape(m, w).astype(np.float64)
        pos += 8 * m * w
        labels = np.frombuffer(data, dtype="<i8", count=m, offset=pos).astype(np.int64)
        pos += 8 * m
        (ilen,) = struct.unpack_from("<I", data, pos)
        ids = json.loads(data[pos + 4 : pos + 4 + ilen])
    except (struct.error, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: corrupted feature file ({exc})") from exc
    return FeatureMatrix(values, labels, ids, header["class_names"], header["provenance"])


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (n_components, width), orthonormal rows
    explained_variance: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]


def feasible_components(requested: int, n_samples: int, width: int) -> int:
    return max(0, min(int(requested), n_samples - 1, width))


def _values(x):
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)


def _complete_basis(vecs, n, width):
    # extend orthonormal rows with unit vectors orthogonal to them (zero-variance directions)
    rows = list(vecs)
    for j in range(width):
        if len(rows) >= n:
            break
        e = np.zeros(width)
        e[j] = 1.0
        for r in rows:
            e -= (r @ e) * r
        norm = np.linalg.norm(e)
        if norm > 1e-6:
            rows.append(e / norm)
    return np.array(rows)


def pca_fit(matrix, n_components: int) -> PcaModel:
    """Top principal axes of the mean-centred sample covariance (ddof=1).

    Uses the smaller of the covariance and Gram matrices for the symmetric
    eigenproblem.
    """
    x = _values(matrix)
    m, width = x.shape
    if n_components < 1:
        raise ValueError(f"n_components must be >= 1, got {n_components}")
    if n_components > min(m - 1, width):
        raise ValueError(f"n_components={n_components} exceeds min(M-1, width)={min(m - 1, width)}")
    mean = x.mean(axis=0)
    xc = x - mean
    if width <= m:
        vals, vecs = sym_eig(xc.T @ xc / (m - 1))
        comps = vecs[:, :n_components].T
        var = vals[:n_components]
    else:
        vals, u = sym_eig(xc @ xc.T / (m - 1))
        var = vals[:n_components]
        keep = var > 1e-12 * max(vals[0], 1e-300)
        comps = (xc.T @ u[:, :n_components][:, keep]) / np.sqrt(var[keep] * (m - 1))
        comps = comps.T
        if comps.shape[0] < n_components:
            comps = _complete_basis(comps, n_components, width)
        var = np.where(keep, var, 0.0)
        pivot = np.argmax(np.abs(comps), axis=1)
        signs = np.sign(comps[np.arange(comps.shape[0]), pivot])
        comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    var = np.maximum(var, 0.0)
    return PcaModel(mean, np.ascontiguousarray(comps), var)


def pca_transform(model: PcaModel, matrix):
    x = _values(matrix)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"width {x.shape[-1]} != PCA input width {model.mean.shape[0]}")
    out = (x - model.mean) @ model.components.T
    if isinstance(matrix, FeatureMatrix):
        return replace(matrix, values=out, provenance=dict(matrix.provenance, pca=model.n_components))
    return out


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x):
        return (np.asarray(x) - self.mean) / self.scale


def standardize_fit(x) -> Standardizer:
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return Standardizer(mean, np.where(std > 1e-12, std, 1.0))

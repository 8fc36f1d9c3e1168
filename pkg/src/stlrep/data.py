"""Dataset ingestion from image manifests/directories and a synthetic
expression-like dataset generator for desk-scale runs."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .features import LabeledDataset, UnlabeledDataset, load_image, preprocess
from .numerics import RandomStream

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".pgm", ".ppm", ".pnm", ".pbm", ".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


class DatasetError(ValueError):
    pass


def _read_manifest(path, required):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise DatasetError(f"{path}: manifest is empty")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise DatasetError(f"{path}, line 1: header must contain {required}, missing {missing}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
        out.append((lineno, dict(zip(header, (c.strip() for c in row)))))
    if not out:
        raise DatasetError(f"{path}: manifest has no data rows")
    return out


def ingest_labeled(manifest_path, target_shape=(96, 96)) -> LabeledDataset:
    """Load a ``path,label,subject_id`` manifest (header row required).

    Image paths are relative to the manifest's directory; the class list is
    the sorted set of label strings.
    """
    manifest_path = Path(manifest_path)
    rows = _read_manifest(manifest_path, ("path", "label", "subject_id"))
    images, labels, subjects, paths = [], [], [], []
    for lineno, row in rows:
        if not row["label"]:
            raise DatasetError(f"{manifest_path}, line {lineno}: empty label")
        if not row["subject_id"]:
            raise DatasetError(f"{manifest_path}, line {lineno}: empty subject_id")
        p = Path(row["path"])
        p = p if p.is_absolute() else manifest_path.parent / p
        if not p.is_file():
            raise DatasetError(f"{manifest_path}, line {lineno}: image not found: {p}")
        try:
            images.append(preprocess(load_image(p), target_shape))
        except ValueError as exc:
            raise DatasetError(f"{manifest_path}, line {lineno}: {exc}") from exc
        labels.append(row["label"])
        subjects.append(row["subject_id"])
        paths.append(row["path"])
    class_names = sorted(set(labels))
    index = {c: i for i, c in enumerate(class_names)}
    return LabeledDataset(np.stack(images), [index[c] for c in labels], subjects, class_names, paths)


def ingest_unlabeled(source, dataset_id, target_shape=(96, 96)) -> UnlabeledDataset:
    """Every decodable image under a directory (recursive, sorted), or the
    ``path`` column of a CSV manifest."""
    source = Path(source)
    if source.is_dir():
        files = sorted(p for p in source.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    elif source.is_file():
        files = [p if p.is_absolute() else source.parent / p
                 for p in (Path(r["path"]) for _, r in _read_manifest(source, ("path",)))]
    else:
        raise DatasetError(f"dataset {dataset_id!r}: source not found: {source}")
    images = []
    for f in files:
        try:
            images.append(preprocess(load_image(f), target_shape))
        except ValueError as exc:
            log.warning("skipping undecodable image %s: %s", f, exc)
    if not images:
        raise DatasetError(f"dataset {dataset_id!r}: no decodable images under {source}")
    return UnlabeledDataset(np.stack(images), dataset_id)


def _smooth_field(stream, shape, sigma):
    f = gaussian_filter(stream.gaussian(size=shape), sigma, mode="wrap")
    f -= f.mean()
    return f / (np.abs(f).max() + 1e-12)


def _grating(shape, angle, freq, phase):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    u = (np.cos(angle) * xx + np.sin(angle) * yy) / max(h, w)
    return np.cos(2 * np.pi * freq * u + phase)


def _expression(shape, cls, n_classes, stream):
    """Class-specific oriented bars confined to a soft 'mouth/brow' window."""
    h, w = shape
    angle = np.pi * cls / n_classes + stream.gaussian(0, 0.05)
    bars = _grating(shape, angle, 4.0, stream.uniform(0, 2 * np.pi))
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h * (0.35 + 0.3 * (cls % 2))
    window = np.exp(-(((yy - cy) / (0.22 * h)) ** 2 + ((xx - w / 2) / (0.35 * w)) ** 2))
    return bars * window


def _save_pgm(path, img):
    from PIL import Image

    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(path, format="PPM")


def synth_generate(out_dir, num_subjects=5, classes=3, samples_per_cell=4, image_shape=(32, 32), seed=7,
                   unlabeled=200, unlabeled_ids=("kyoto",), signal=0.1):
    """Write a synthetic labeled set and unlabeled auxiliary sets as 8-bit PGM files.

    Labeled image = subject base pattern (smooth random field plus an oval
    'face') + class-specific oriented bars + noise. Unlabeled images are
    smooth random fields with random gratings; each dataset id gets its own
    smoothness. ``signal`` scales the class pattern against the subject
    pattern and noise. Returns (labeled manifest path, {dataset_id: directory}).
    """
    out = Path(out_dir)
    lab_dir = out / "labeled"
    lab_dir.mkdir(parents=True, exist_ok=True)
    root = RandomStream(seed)
    h, w = image_shape
    yy, xx = np.mgrid[0:h, 0:w]
    face = np.exp(-(((yy - h / 2) / (0.45 * h)) ** 2 + ((xx - w / 2) / (0.38 * w)) ** 2))
    class_names = [f"class{c}" for c in range(classes)]
    lines = ["path,label,subject_id"]
    for s in range(num_subjects):
        sub = root.child("subject", s)
        base = 0.25 + 0.35 * face + 0.12 * _smooth_field(sub.child("base"), image_shape, 3.0)
        for c in range(classes):
            for k in range(samples_per_cell):
                st = sub.child("sample", c * samples_per_cell + k)
                img = base + signal * _expression(image_shape, c, classes, st) + st.gaussian(0, 0.03, image_shape)
                name = f"s{s:02d}_{class_names[c]}_{k:02d}.pgm"
                _save_pgm(lab_dir / name, img)
                lines.append(f"{name},{class_names[c]},subject{s:02d}")
    manifest = lab_dir / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    aux = {}
    for j, ds in enumerate(unlabeled_ids):
        d = out / "unlabeled" / ds
        d.mkdir(parents=True, exist_ok=True)
        dstream = root.child(f"unlabeled:{ds}")
        sigma = 1.5 + 1.5 * j
        for i in range(unlabeled):
            st = dstream.child("image", i)
            img = 0.5 + 0.3 * _smooth_field(st, image_shape, sigma)
            img += 0.15 * _grating(image_shape, st.uniform(0, np.pi), st.uniform(2, 6), st.uniform(0, 2 * np.pi))
            _save_pgm(d / f"{ds}_{i:04d}.pgm", img)
        aux[ds] = d
    return manifest, aux

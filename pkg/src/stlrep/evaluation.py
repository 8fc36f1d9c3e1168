"""Leave-one-subject-out evaluation, metrics and experiment reports."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata
from threadpoolctl import threadpool_limits

from .classifiers import predict_proba, train_classifier
from .ensembles import (
    PosteriorMatrix,
    fuse_product,
    fuse_sum,
    knorau_batch,
    knorau_combine,
    nearest_neighbors,
    stack_predict,
    stack_train,
)
from .features import feasible_components, pca_fit, pca_transform, standardize_fit
from .numerics import RandomStream

REPORT_FORMAT = "stlrep-report/1"
COLUMN_NAMES = {"svm": "SVM", "bagging": "BG", "forest": "RF"}
DES_COLUMN_NAMES = {"bagging": "KnoraU-DT", "forest": "KnoraU-RF"}
FUSION_ROWS = {"sum": "Sum", "product": "Product", "stacking": "Stacking", "knorau": "KnoraU"}


@dataclass
class LosoFold:
    test_subject: str
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def loso_split(subject_ids, labels, validation_fraction=0.2, seed=0):
    """One fold per subject (sorted by id).

    The validation set takes ``round(fraction * n)`` of the non-test samples,
    allocated to classes proportionally (largest remainder) and drawn at
    random within each class.
    """
    subjects = np.asarray([str(s) for s in subject_ids])
    labels = np.asarray(labels)
    if subjects.shape[0] != labels.shape[0]:
        raise ValueError("subject ids and labels differ in length")
    uniq = sorted(set(subjects.tolist()))
    if len(uniq) < 2:
        raise ValueError(f"leave-one-subject-out needs at least 2 subjects, found {len(uniq)}")
    if not 0 <= validation_fraction < 1:
        raise ValueError(f"validation_fraction must lie in [0, 1), got {validation_fraction}")
    root = RandomStream(seed).child("loso-validation")
    folds = []
    for f, subj in enumerate(uniq):
        test = np.nonzero(subjects == subj)[0]
        rest = np.nonzero(subjects != subj)[0]
        n_val = int(round(validation_fraction * rest.size))
        val = []
        if n_val:
            cls, counts = np.unique(labels[rest], return_counts=True)
            quota = n_val * counts / rest.size
            take = np.floor(quota).astype(int)
            order = np.argsort(-(quota - take), kind="stable")
            take[order[: n_val - take.sum()]] += 1
            stream = root.child("fold", f)
            for c, t in zip(cls, take):
                members = rest[labels[rest] == c]
                val.extend(members[stream.sample_without_replacement(members.size, int(t))].tolist())
        val = np.sort(np.asarray(val, dtype=np.int64))
        train = np.setdiff1d(rest, val)
        folds.append(LosoFold(subj, train, val, test))
    return folds


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {labels.shape}")
    return float(np.mean(predictions == labels))


def auc_binary(scores, positive) -> float | None:
    """Rank-statistic AUC (ties count 1/2); None without both classes."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_ovr(posteriors, labels, classes=None):
    """Per-class one-vs-rest AUC plus their unweighted mean.

    Returns ``(per_class, mean)`` where ``per_class`` maps each class to its
    AUC or None when that class has no positive or no negative example;
    absent classes are left out of the mean.
    """
    values = posteriors.values if isinstance(posteriors, PosteriorMatrix) else np.asarray(posteriors)
    if classes is None:
        classes = posteriors.classes if isinstance(posteriors, PosteriorMatrix) else range(values.shape[1])
    labels = np.asarray(labels)
    per_class = {c: auc_binary(values[:, j], labels == c) for j, c in enumerate(classes)}
    present = [v for v in per_class.values() if v is not None]
    return per_class, (float(np.mean(present)) if present else None)


# ----------------------------------------------------------------- folds


def _columns(cfg):
    cols = [(k, COLUMN_NAMES[k]) for k in cfg["classifiers"]]
    if "knorau" in cfg["fusion"] and cfg["knorau"]["pool"] == "members":
        cols += [(f"des-{k}", DES_COLUMN_NAMES[k]) for k in cfg["classifiers"] if k in DES_COLUMN_NAMES]
    return cols


def _fusion_rows(cfg):
    rows = []
    for f in ("sum", "product", "stacking", "knorau"):
        if f not in cfg["fusion"]:
            continue
        if f == "knorau" and cfg["knorau"]["pool"] != "representations":
            continue
        rows.append(FUSION_ROWS[f])
    return rows


def _classifier_params(cfg, kind):
    if kind == "svm":
        s = cfg["svm"]
        return {"C": s["C"], "class_weight": None if s["class_weight"] == "none" else "balanced",
                "max_iter": s["max_iter"]}
    if kind == "bagging":
        b = cfg["bagging"]
        return {"n_estimators": b["n_estimators"], "sample_fraction": b["sample_fraction"],
                "max_depth": b["max_depth"], "max_features": b["max_features"]}
    f = cfg["forest"]
    return {"n_trees": f["n_trees"], "max_depth": f["max_depth"], "max_features": f["max_features"],
            "oob": f["oob_score"]}


def _expand(post: PosteriorMatrix, n_classes):
    out = np.zeros((post.values.shape[0], n_classes))
    out[:, list(post.classes)] = post.values
    return PosteriorMatrix(out, tuple(range(n_classes)))


def evaluate_fold(fold_index, fold: LosoFold, features, labels, n_classes, cfg, master_seed):
    """Train and score every (row, column) cell on one fold.

    ``features`` is a list of raw (M, width) matrices, one per
    representation. Returns a dict with test posteriors per cell.
    """
    with threadpool_limits(limits=1):
        return _evaluate_fold(fold_index, fold, features, labels, n_classes, cfg, master_seed)


def _evaluate_fold(fold_index, fold, features, labels, n_classes, cfg, master_seed):
    tr, va, te = fold.train, fold.validation, fold.test
    y = np.asarray(labels)
    all_classes = tuple(range(n_classes))
    k = cfg["knorau"]["k"]
    cols = _columns(cfg)
    stream = RandomStream(master_seed).child("fold", fold_index)
    notes, oob = [], {}
    spaces = []
    val_post = {}
    test_post = {}
    for r, x in enumerate(features):
        n_comp = feasible_components(cfg["pca_components"], tr.size, x.shape[1])
        if n_comp < 1:
            raise ValueError(f"fold {fold.test_subject}: too few training samples for PCA")
        if n_comp < cfg["pca_components"]:
            notes.append(f"fold {fold.test_subject}, representation {r + 1}: "
                         f"PCA clamped {cfg['pca_components']} -> {n_comp}")
        pca = pca_fit(x[tr], n_comp)
        z = pca_transform(pca, x)
        z = standardize_fit(z[tr]).transform(z)
        spaces.append(z)
        for kind in cfg["classifiers"]:
            try:
                model = train_classifier(kind, z[tr], y[tr], _classifier_params(cfg, kind),
                                         stream.child(kind, r))
            except ValueError as exc:
                raise ValueError(f"fold {fold.test_subject}, representation {r + 1}, {kind}: {exc}") from exc
            if kind == "forest" and model.oob_score is not None:
                oob[r] = model.oob_score
            test_post[(r, kind)] = PosteriorMatrix(predict_proba(model, z[te], all_classes), all_classes)
            if va.size:
                val_post[(r, kind)] = PosteriorMatrix(predict_proba(model, z[va], all_classes), all_classes)
            des = f"des-{kind}"
            if any(c == des for c, _ in cols):
                p, _ = knorau_batch(model.trees, z[va], y[va], z[te], k)
                test_post[(r, des)] = _expand(p, n_classes)
                p, _ = knorau_batch(model.trees, z[va], y[va], z[va], k, exclude_self=True)
                val_post[(r, des)] = _expand(p, n_classes)

    cells = {}
    reps = range(len(features))
    for col, _ in cols:
        members = [test_post[(r, col)] for r in reps]
        for r in reps:
            cells[(f"rep{r}", col)] = members[r].values
        fusion = cfg["fusion"]
        if "sum" in fusion:
            cells[("Sum", col)] = fuse_sum(members).values
        if "product" in fusion:
            cells[("Product", col)] = fuse_product(members).values
        if "stacking" in fusion:
            meta = stack_train([val_post[(r, col)] for r in reps], y[va], C=cfg["stacking"]["C"],
                               max_iter=cfg["stacking"]["max_iter"])
            cells[("Stacking", col)] = stack_predict(meta, members).values
        if "knorau" in fusion and cfg["knorau"]["pool"] == "representations":
            val_preds = np.stack([val_post[(r, col)].argmax() for r in reps], axis=1)
            test_preds = np.stack([members[r].argmax() for r in reps], axis=1)
            nbrs = nearest_neighbors(spaces[0][va], spaces[0][te], k)
            post, _ = knorau_combine(nbrs, val_preds, y[va], test_preds,
                                     np.stack([m.values for m in members]), all_classes)
            cells[("KnoraU", col)] = post
    return {"fold": fold_index, "subject": fold.test_subject, "test": te, "cells": cells, "notes": notes,
            "oob": oob}


# ---------------------------------------------------------------- report


@dataclass
class ExperimentReport:
    data: dict

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if data.get("format") != REPORT_FORMAT:
            raise ValueError(f"not an stlrep report (format={data.get('format')!r})")
        return cls(data)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @property
    def rows(self):
        return self.data["rows"]

    @property
    def columns(self):
        return self.data["columns"]

    def accuracy(self, row, col):
        return self.data["accuracy"][row][col]

    def individual_rows(self):
        return [r for r in self.rows if r not in FUSION_ROWS.values()]

    def fusion_rows(self):
        return [r for r in self.rows if r in FUSION_ROWS.values()]

    def fusion_check(self):
        """Per column: mean/min of the individual rows and each fused row's accuracy."""
        out = {}
        for col in self.columns:
            ind = [self.accuracy(r, col) for r in self.individual_rows()]
            fused = {r: self.accuracy(r, col) for r in self.fusion_rows() if self.accuracy(r, col) is not None}
            out[col] = {"mean_individual": float(np.mean(ind)), "min_individual": float(min(ind)),
                        "fused": fused, "fused_beats_mean": {r: v > np.mean(ind) for r, v in fused.items()}}
        return out

    def _table(self, cell_fn):
        header = ["Repr."] + self.columns
        lines = []
        for row in self.rows:
            vals = [cell_fn(row, c) for c in self.columns]
            lines.append([row] + ["-" if v is None else f"{100 * v:.2f}" for v in vals])
        return header, lines

    def render_text(self) -> str:
        d = self.data
        buf = io.StringIO()
        buf.write(f"strategy: {d['strategy']}   samples: {d['n_samples']}   folds: {len(d['folds'])}   "
                  f"classes: {', '.join(d['class_names'])}\n\n")
        for title, fn in (("Accuracy (%)", self.accuracy),
                          ("Mean one-vs-rest AUC (%)", lambda r, c: d["auc"][r][c]["mean"])):
            header, lines = self._table(fn)
            widths = [max(len(str(x[i])) for x in [header] + lines) for i in range(len(header))]
            buf.write(title + "\n")
            fmt = lambda cells: "  ".join(  # noqa: E731
                str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i]) for i, c in enumerate(cells))
            buf.write(fmt(header) + "\n")
            n_ind = len(self.individual_rows())
            for i, line in enumerate(lines):
                if i == n_ind:
                    buf.write("-" * (sum(widths) + 2 * (len(widths) - 1)) + "\n")
                buf.write(fmt(line) + "\n")
            buf.write("\n")
        buf.write("Per-class AUC (%) of fused rows\n")
        for row in self.fusion_rows():
            for col in self.columns:
                per = d["auc"][row][col]["per_class"]
                vals = "  ".join(f"{name}={'absent' if v is None else f'{100 * v:.2f}'}" for name, v in per.items())
                buf.write(f"  {row}/{col}: {vals}\n")
        if d["notes"]:
            buf.write("\nNotes\n")
            for n in d["notes"]:
                buf.write(f"  {n}\n")
        return buf.getvalue()

    def csv_tables(self):
        d = self.data
        out = {}
        for name, fn in (("accuracy.csv", self.accuracy), ("auc_mean.csv", lambda r, c: d["auc"][r][c]["mean"])):
            s = io.StringIO()
            w = csv.writer(s, lineterminator="\n")
            w.writerow(["representation"] + self.columns)
            for row in self.rows:
                w.writerow([row] + ["" if fn(row, c) is None else repr(fn(row, c)) for c in self.columns])
            out[name] = s.getvalue()
        s = io.StringIO()
        w = csv.writer(s, lineterminator="\n")
        w.writerow(["representation", "classifier"] + d["class_names"] + ["mean"])
        for row in self.rows:
            for col in self.columns:
                a = d["auc"][row][col]
                w.writerow([row, col] + ["" if a["per_class"][n] is None else repr(a["per_class"][n])
                                         for n in d["class_names"]] + ["" if a["mean"] is None else repr(a["mean"])])
        out["auc_per_class.csv"] = s.getvalue()
        s = io.StringIO()
        w = csv.writer(s, lineterminator="\n")
        w.writerow(["fold", "test_subject", "n_test", "representation", "classifier", "accuracy"])
        for i, f in enumerate(d["folds"]):
            for row in self.rows:
                for col in self.columns:
                    v = f["accuracy"][row][col]
                    w.writerow([i, f["subject"], f["n_test"], row, col, "" if v is None else repr(v)])
        out["folds.csv"] = s.getvalue()
        return out

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(self.to_json(), encoding="utf-8")
        (directory / "tables.txt").write_text(self.render_text(), encoding="utf-8")
        for name, text in self.csv_tables().items():
            (directory / name).write_text(text, encoding="utf-8")


def evaluate_representations(feature_matrices, representations, cfg: dict, master_seed: int, jobs: int = 1,
                             echo=None) -> ExperimentReport:
    """Run the LOSO protocol over raw per-representation feature matrices.

    ``representations`` is a list of spec dicts (same order as the
    matrices). Folds are independent; ``jobs > 1`` runs them in worker
    processes and the report is assembled in fold order.
    """
    if not feature_matrices:
        raise ValueError("no representations to evaluate")
    first = feature_matrices[0]
    for fm in feature_matrices[1:]:
        if not (np.array_equal(fm.labels, first.labels) and fm.subject_ids == first.subject_ids):
            raise ValueError("feature matrices disagree on sample order, labels or subjects")
    labels = first.labels
    n_classes = len(first.class_names)
    folds = loso_split(first.subject_ids, labels, cfg["validation_fraction"], master_seed)
    for f in folds:
        if f.test_subject in {first.subject_ids[i] for i in np.r_[f.train, f.validation]}:
            raise RuntimeError(f"fold {f.test_subject}: test subject leaked into train/validation")
    mats = [fm.values for fm in feature_matrices]
    args = [(i, f, mats, labels, n_classes, cfg, master_seed) for i, f in enumerate(folds)]
    if jobs > 1 and len(folds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(evaluate_fold, *zip(*args)))
    else:
        results = [evaluate_fold(*a) for a in args]

    cols = _columns(cfg)
    rep_rows = [f"R{r + 1} {representations[r]['label']}" for r in range(len(mats))]
    row_keys = [f"rep{r}" for r in range(len(mats))] + _fusion_rows(cfg)
    row_names = dict(zip(row_keys, rep_rows + _fusion_rows(cfg)))
    col_names = dict(cols)
    m = labels.shape[0]
    pooled = {(rk, ck): np.zeros((m, n_classes)) for rk in row_keys for ck, _ in cols}
    fold_records, notes = [], []
    oob = {r: [] for r in range(len(mats))}
    for res in results:
        te = res["test"]
        acc = {row_names[rk]: {} for rk in row_keys}
        for rk in row_keys:
            for ck, cn in cols:
                post = res["cells"].get((rk, ck))
                if post is None:
                    acc[row_names[rk]][cn] = None
                    continue
                pooled[(rk, ck)][te] = post
                acc[row_names[rk]][cn] = accuracy(np.argmax(post, axis=1), labels[te])
        fold_records.append({"subject": res["subject"], "n_test": int(te.size), "accuracy": acc})
        notes.extend(res["notes"])
        for r, v in res["oob"].items():
            oob[r].append(v)
    accuracy_tbl, auc_tbl = {}, {}
    class_names = list(first.class_names)
    for rk in row_keys:
        rn = row_names[rk]
        accuracy_tbl[rn], auc_tbl[rn] = {}, {}
        for ck, cn in cols:
            if all((rk, ck) not in res["cells"] for res in results):
                accuracy_tbl[rn][cn] = None
                auc_tbl[rn][cn] = {"per_class": {n: None for n in class_names}, "mean": None}
                continue
            post = pooled[(rk, ck)]
            correct = int(np.sum(np.argmax(post, axis=1) == labels))
            accuracy_tbl[rn][cn] = correct / m
            per, mean = auc_ovr(post, labels, range(n_classes))
            auc_tbl[rn][cn] = {"per_class": {class_names[c]: v for c, v in per.items()}, "mean": mean}
    data = {
        "format": REPORT_FORMAT,
        "strategy": (echo or {}).get("strategy", cfg.get("strategy")),
        "config": echo if echo is not None else cfg,
        "representations": [dict(r, row=rep_rows[i]) for i, r in enumerate(representations)],
        "columns": [cn for _, cn in cols],
        "rows": [row_names[rk] for rk in row_keys],
        "class_names": class_names,
        "n_samples": int(m),
        "accuracy": accuracy_tbl,
        "auc": auc_tbl,
        "folds": fold_records,
        "forest_oob": {rep_rows[r]: float(np.mean(v)) for r, v in oob.items() if v},
        "notes": notes,
    }
    return ExperimentReport(data)

import itertools

import numpy as np
import pytest

from stlrep.config import _defaults
from stlrep.ensembles import PosteriorMatrix
from stlrep.evaluation import ExperimentReport, accuracy, auc_binary, auc_ovr, evaluate_representations, loso_split
from stlrep.features import FeatureMatrix


def auc_pairs(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_accuracy():
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75
    assert accuracy([2, 2], [2, 2]) == 1.0
    with pytest.raises(ValueError):
        accuracy([], [])


def test_auc_hand_values():
    assert auc_binary([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc_binary([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    assert auc_binary([0.5, 0.5], [1, 0]) == 0.5
    assert auc_binary([0.1, 0.2], [1, 1]) is None


def test_auc_matches_all_pairs_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(2, 30))
        scores = rng.integers(0, 6, size=n) / 5.0  # many ties
        positive = rng.integers(0, 2, size=n).astype(bool)
        if positive.all() or not positive.any():
            positive[0] = not positive[0]
        assert abs(auc_binary(scores, positive) - auc_pairs(scores, positive)) <= 1e-12


def test_auc_ovr_absent_class():
    post = PosteriorMatrix([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]], (0, 1, 2))
    per, mean = auc_ovr(post, [0, 1, 0])
    assert per[2] is None and per[0] == 1.0 and per[1] == 1.0 and mean == 1.0


def test_loso_ten_subjects_ten_folds(rng):
    subjects = np.repeat([f"s{i}" for i in range(10)], 7)
    labels = rng.integers(0, 3, size=subjects.size)
    folds = loso_split(subjects, labels, 0.2, seed=5)
    assert len(folds) == 10
    seen = []
    for f in folds:
        held = set(subjects[f.test])
        assert held == {f.test_subject}
        assert f.test_subject not in set(subjects[f.train]) | set(subjects[f.validation])
        assert len(set(f.train) & set(f.validation)) == 0
        assert f.train.size + f.validation.size + f.test.size == subjects.size
        assert f.validation.size == round(0.2 * (subjects.size - f.test.size))
        seen.extend(f.test)
    assert sorted(seen) == list(range(subjects.size))
    again = loso_split(subjects, labels, 0.2, seed=5)
    assert all(np.array_equal(a.validation, b.validation) for a, b in zip(folds, again))


def test_loso_stratified_validation():
    subjects = np.repeat(["a", "b", "c"], 10)
    labels = np.tile([0] * 8 + [1] * 2, 3)
    for f in loso_split(subjects, labels, 0.2, seed=0):
        assert np.sum(labels[f.validation] == 1) == 1 and f.validation.size == 4


def test_loso_degenerate():
    with pytest.raises(ValueError, match="at least 2 subjects"):
        loso_split(["a", "a"], [0, 1])
    folds = loso_split(["a", "b"], [0, 1], 0.0)
    assert all(f.validation.size == 0 for f in folds)


def _synthetic_features(rng, n_reps=2, subjects=4, per=9):
    y = np.tile(np.arange(3), subjects * per // 3)
    ids = np.repeat([f"p{i}" for i in range(subjects)], per)
    mats = []
    for r in range(n_reps):
        x = rng.normal(size=(y.size, 12))
        x[:, r] += 1.5 * y
        mats.append(FeatureMatrix(x, y, ids, ["a", "b", "c"]))
    return mats


def _cfg(**over):
    cfg = _defaults()
    cfg.update(classifiers=["svm", "forest"], pca_components=5)
    cfg["forest"]["n_trees"] = 8
    cfg["svm"]["max_iter"] = 500
    cfg["knorau"]["k"] = 3
    for k, v in over.items():
        cfg[k] = v
    return cfg


def test_evaluate_report_structure_and_micro_accuracy(rng):
    mats = _synthetic_features(rng)
    reps = [{"label": "x"}, {"label": "y"}]
    rep = evaluate_representations(mats, reps, _cfg(), master_seed=0)
    assert rep.columns == ["SVM", "RF", "KnoraU-RF"]
    assert rep.rows == ["R1 x", "R2 y", "Sum", "Product", "Stacking"]
    for row in rep.rows:
        for col in rep.columns:
            folds = rep.data["folds"]
            correct = sum(f["accuracy"][row][col] * f["n_test"] for f in folds)
            assert rep.accuracy(row, col) == pytest.approx(correct / sum(f["n_test"] for f in folds), abs=1e-12)
    assert "PCA" not in " ".join(rep.data["notes"])
    text = rep.render_text()
    assert "Accuracy (%)" in text and "KnoraU-RF" in text
    assert set(rep.csv_tables()) == {"accuracy.csv", "auc_mean.csv", "auc_per_class.csv", "folds.csv"}


def test_evaluate_representation_pool_row(rng):
    cfg = _cfg()
    cfg["knorau"] = {"k": 3, "pool": "representations"}
    rep = evaluate_representations(_synthetic_features(rng), [{"label": "x"}, {"label": "y"}], cfg, 0)
    assert rep.rows[-1] == "KnoraU" and rep.columns == ["SVM", "RF"]
    check = rep.fusion_check()
    assert set(check) == {"SVM", "RF"} and "KnoraU" in check["SVM"]["fused"]


def test_evaluate_parallel_identical_and_roundtrip(rng, tmp_path):
    mats = _synthetic_features(rng)
    reps = [{"label": "x"}, {"label": "y"}]
    a = evaluate_representations(mats, reps, _cfg(), 3, jobs=1)
    b = evaluate_representations(mats, reps, _cfg(), 3, jobs=3)
    assert a.to_json() == b.to_json()
    a.write(tmp_path)
    assert ExperimentReport.load(tmp_path / "report.json").to_json() == a.to_json()
    with pytest.raises(ValueError):
        ExperimentReport.from_json('{"format": "other"}')


def test_evaluate_pca_clamp_noted(rng):
    cfg = _cfg(pca_components=150)
    rep = evaluate_representations(_synthetic_features(rng, n_reps=1), [{"label": "x"}], cfg, 0)
    assert any("clamped 150 -> 12" in n for n in rep.data["notes"])


def test_evaluate_rejects_misaligned(rng):
    a, b = _synthetic_features(rng)
    b.labels = b.labels[::-1].copy()
    with pytest.raises(ValueError, match="disagree"):
        evaluate_representations([a, b], [{"label": "x"}, {"label": "y"}], _cfg(), 0)

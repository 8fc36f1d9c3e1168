import hashlib

import numpy as np
import pytest

from stlrep.data import DatasetError, ingest_labeled, ingest_unlabeled, synth_generate


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_counts_and_determinism(tmp_path):
    m, aux = synth_generate(tmp_path / "a", unlabeled=5)
    rows = m.read_text().strip().splitlines()
    assert rows[0] == "path,label,subject_id" and len(rows) == 61
    assert len(list(aux["kyoto"].glob("*.pgm"))) == 5
    synth_generate(tmp_path / "b", unlabeled=5)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    synth_generate(tmp_path / "c", unlabeled=5, seed=8)
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_ingest_labeled(tmp_path):
    m, _ = synth_generate(tmp_path, num_subjects=2, classes=3, samples_per_cell=1, unlabeled=1)
    ds = ingest_labeled(m, (16, 16))
    assert len(ds) == 6 and ds.images.shape == (6, 16, 16, 1)
    assert ds.class_names == ["class0", "class1", "class2"]
    assert sorted(set(ds.subject_ids)) == ["subject00", "subject01"]
    assert 0 <= ds.images.min() and ds.images.max() <= 1


def test_ingest_labeled_duplicates_allowed(tmp_path):
    m, _ = synth_generate(tmp_path, num_subjects=2, classes=2, samples_per_cell=1, unlabeled=1)
    lines = m.read_text().splitlines()
    m.write_text("\n".join(lines + [lines[1]]) + "\n")
    assert len(ingest_labeled(m, (8, 8))) == 5


@pytest.mark.parametrize("row,msg", [("x.pgm,a,", "empty subject_id"), ("missing.pgm,a,s1", "not found"),
                                      ("x.pgm,a", "line 2: expected 3 fields")])
def test_ingest_labeled_errors(tmp_path, row, msg):
    m, _ = synth_generate(tmp_path, num_subjects=1, classes=1, samples_per_cell=1, unlabeled=1)
    (tmp_path / "labeled" / "x.pgm").write_bytes((tmp_path / "labeled" / "s00_class0_00.pgm").read_bytes())
    m.write_text("path,label,subject_id\n" + row + "\n")
    with pytest.raises(DatasetError, match=msg):
        ingest_labeled(m, (8, 8))


def test_ingest_labeled_empty_and_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("path,label,subject_id\n")
    with pytest.raises(DatasetError, match="no data rows"):
        ingest_labeled(p)
    p.write_text("file,label\n")
    with pytest.raises(DatasetError, match="header"):
        ingest_labeled(p)


def test_ingest_unlabeled_dir_and_manifest(tmp_path, caplog):
    _, aux = synth_generate(tmp_path, num_subjects=1, classes=1, samples_per_cell=1, unlabeled=4)
    d = aux["kyoto"]
    (d / "junk.pgm").write_bytes(b"not an image")
    ds = ingest_unlabeled(d, "kyoto", (8, 8))
    assert ds.images.shape == (4, 8, 8, 1)
    assert "skipping" in caplog.text
    man = tmp_path / "u.csv"
    man.write_text("path\n" + "\n".join(f"unlabeled/kyoto/kyoto_{i:04d}.pgm" for i in range(2)) + "\n")
    assert ingest_unlabeled(man, "kyoto", (8, 8)).images.shape[0] == 2
    np.testing.assert_array_equal(ingest_unlabeled(man, "k", (8, 8)).images, ds.images[:2])


def test_ingest_unlabeled_empty(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError, match="no decodable"):
        ingest_unlabeled(tmp_path / "empty", "x")
    with pytest.raises(DatasetError, match="not found"):
        ingest_unlabeled(tmp_path / "nope", "x")

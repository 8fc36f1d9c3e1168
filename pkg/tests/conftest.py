import numpy as np
import pytest


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` with respect to array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0), 1e-8)
    return float(np.abs(a - b).max(initial=0) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CONFIG = """\
strategy = "{strategy}"
master_seed = {seed}
target_manifest = "data/labeled/manifest.csv"
output_dir = "{out}"
classifiers = ["svm", "forest"]
pca_components = 6

[auxiliary]
kyoto = "data/unlabeled/kyoto"
lfw = "data/unlabeled/lfw"

[seeds]
count = 2

[datasets]
ids = ["kyoto", "lfw"]

[architecture]
depth = 2

[latent]
sizes = [4, 8]

[cae]
input_shape = [16, 16, 1]
depth = 1
filters = [4, 4]
latent_size = 8
epochs = 2
batch_size = 8

[svm]
max_iter = 300

[forest]
n_trees = 5

[knorau]
k = 3
"""


def make_tiny_run(root, strategy="seeds", seed=0, out="out"):
    """Synthetic data plus a small config under ``root``; returns the config path."""
    from stlrep.data import synth_generate

    if not (root / "data").exists():
        synth_generate(root / "data", num_subjects=3, classes=3, samples_per_cell=3, image_shape=(16, 16),
                       unlabeled=16, unlabeled_ids=("kyoto", "lfw"))
    path = root / f"{strategy}-{seed}-{out}.toml"
    path.write_text(TINY_CONFIG.format(strategy=strategy, seed=seed, out=out))
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

"""Experiment configuration: a TOML file of ``key = value`` lines with
``[section]`` headers (dotted keys such as ``knorau.k = 7`` also work).

Every key is optional except ``target_manifest`` and, for the strategies
that train on it, an entry in ``[auxiliary]``. Defaults follow the
reference parameter settings of the method. Grammar::

    strategy = "seeds"              # seeds | datasets | architecture | latent | combined
    master_seed = 0
    target_manifest = "labeled/manifest.csv"
    output_dir = "runs/demo"
    classifiers = ["svm", "bagging", "forest"]
    fusion = ["sum", "product", "stacking", "knorau"]
    validation_fraction = 0.2
    pca_components = 150

    [auxiliary]                     # dataset id = image directory or manifest
    kyoto = "unlabeled/kyoto"

    [seeds]         count = 10
    [datasets]      ids = ["kyoto", "lfw-face", "lfw", "stl-10"]
    [architecture]  depth = 5
    [latent]        sizes = [150, 200, ..., 2500]
    [cae]           input_shape, depth, latent_size, filters, kernel, epochs,
                    learning_rate, batch_size, seed, auxiliary
    [svm]           kernel, C, class_weight, probability, max_iter
    [bagging]       max_depth, max_features, n_estimators, sample_fraction
    [forest]        max_depth, max_features, n_trees, oob_score
    [knorau]        k, pool ("members" | "representations")
    [stacking]      meta, solver, C, max_iter

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cae import LATENT_SIZES, ArchitectureSpec, default_filters

STRATEGY_NAMES = ("seeds", "datasets", "architecture", "latent", "combined")
CLASSIFIER_NAMES = ("svm", "bagging", "forest")
FUSION_NAMES = ("sum", "product", "stacking", "knorau")
DEFAULT_DATASETS = ["kyoto", "lfw-face", "lfw", "stl-10"]


class ConfigError(ValueError):
    pass


def _defaults():
    return {
        "strategy": "seeds",
        "master_seed": 0,
        "target_manifest": None,
        "output_dir": "stlrep-run",
        "classifiers": ["svm", "bagging", "forest"],
        "fusion": ["sum", "product", "stacking", "knorau"],
        "validation_fraction": 0.2,
        "pca_components": 150,
        "auxiliary": {},
        "seeds": {"count": 10},
        "datasets": {"ids": list(DEFAULT_DATASETS)},
        "architecture": {"depth": 5},
        "latent": {"sizes": list(LATENT_SIZES)},
        "cae": {
            "input_shape": [96, 96, 1],
            "depth": 5,
            "latent_size": 2500,
            "filters": list(default_filters(5)),
            "kernel": 3,
            "epochs": 20,
            "learning_rate": 0.01,
            "batch_size": 16,
            "seed": 0,
            "auxiliary": "kyoto",
        },
        "svm": {"kernel": "linear", "C": 1e-6, "class_weight": "balanced", "probability": True, "max_iter": 10_000},
        "bagging": {"max_depth": 10, "max_features": "sqrt", "n_estimators": 100, "sample_fraction": 1.0},
        "forest": {"max_depth": 10, "max_features": "sqrt", "n_trees": 100, "oob_score": True},
        "knorau": {"k": 7, "pool": "members"},
        "stacking": {"meta": "logistic_regression", "solver": "lbfgs", "C": 1.0, "max_iter": 500},
    }


DEFAULTS = _defaults()


@dataclass
class ExperimentConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)
    jobs: int = 1

    def __getitem__(self, key):
        return self.values[key]

    @property
    def strategy(self):
        return self.values["strategy"]

    @property
    def master_seed(self):
        return self.values["master_seed"]

    @property
    def output_dir(self):
        return self.resolve(self.values["output_dir"])

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def target_manifest(self):
        return self.resolve(self.values["target_manifest"])

    def auxiliary_path(self, dataset_id):
        try:
            return self.resolve(self.values["auxiliary"][dataset_id])
        except KeyError:
            raise ConfigError(f"unknown dataset id {dataset_id!r}: not listed in [auxiliary]") from None

    def base_architecture(self, depth=None) -> ArchitectureSpec:
        c = self.values["cae"]
        return _architecture(c, c["depth"] if depth is None else depth)

    def echo(self):
        """Configuration as echoed into reports (run-location keys dropped)."""
        out = copy.deepcopy(self.values)
        out.pop("output_dir", None)
        return out


def _architecture(c, depth):
    return ArchitectureSpec(
        depth=depth, latent_size=c["latent_size"], filters=tuple(c["filters"][:depth]), kernel=c["kernel"],
        input_shape=tuple(c["input_shape"]), epochs=c["epochs"], learning_rate=c["learning_rate"],
        batch_size=c["batch_size"], seed=c["seed"],
    )


def _line_of(text, key):
    leaf = key.split(".")[-1]
    pat = re.compile(rf"^\s*(?:[\w\-]+\.)*{re.escape(leaf)}\s*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, key):
    line = _line_of(text, key) if text is not None else None
    return f"{key!r} (line {line})" if line else repr(key)


def _check_type(name, value, default, text):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str) or default is None:
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{_where(text, name)}: expected {type(default).__name__}, got {value!r}")
    return value


def merge(values: dict, text=None) -> dict:
    """Overlay ``values`` on the defaults, rejecting unknown keys and bad types."""
    out = _defaults()
    for key, value in values.items():
        if key not in out:
            raise ConfigError(f"unknown key {_where(text, key)}")
        if key == "auxiliary":
            if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
                raise ConfigError(f"{_where(text, key)}: expected a table of dataset id = path")
            out[key] = dict(value)
        elif isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{_where(text, key)}: expected a [{key}] table")
            for sub, v in value.items():
                if sub not in out[key]:
                    raise ConfigError(f"unknown key {_where(text, f'{key}.{sub}')}")
                out[key][sub] = _check_type(f"{key}.{sub}", v, out[key][sub], text)
        else:
            out[key] = _check_type(key, value, out[key], text)
    return out


def validate(values: dict, text=None, base_dir=None, check_paths=True):
    def fail(key, msg):
        raise ConfigError(f"{_where(text, key)}: {msg}")

    if values["strategy"] not in STRATEGY_NAMES:
        fail("strategy", f"must be one of {STRATEGY_NAMES}")
    if values["master_seed"] < 0:
        fail("master_seed", "must be >= 0")
    for c in values["classifiers"]:
        if c not in CLASSIFIER_NAMES:
            fail("classifiers", f"unknown classifier {c!r}; choose from {CLASSIFIER_NAMES}")
    if not values["classifiers"]:
        fail("classifiers", "at least one classifier is required")
    for f in values["fusion"]:
        if f not in FUSION_NAMES:
            fail("fusion", f"unknown fusion rule {f!r}; choose from {FUSION_NAMES}")
    vf = values["validation_fraction"]
    if not 0 <= vf < 1:
        fail("validation_fraction", "must lie in [0, 1)")
    if vf == 0 and {"stacking", "knorau"} & set(values["fusion"]):
        fail("validation_fraction", "stacking and knorau need a validation set (fraction > 0)")
    if values["pca_components"] < 1:
        fail("pca_components", "must be >= 1")
    if values["seeds"]["count"] < 1:
        fail("seeds.count", "must be >= 1")
    if values["seeds"]["count"] > 1001:
        fail("seeds.count", "at most 1001 distinct seeds exist in [0, 1000]")
    if values["architecture"]["depth"] < 1:
        fail("architecture.depth", "must be >= 1")
    if not values["latent"]["sizes"] or any(not isinstance(s, int) or s < 1 for s in values["latent"]["sizes"]):
        fail("latent.sizes", "must be a non-empty list of positive integers")
    if not values["datasets"]["ids"]:
        fail("datasets.ids", "must not be empty")
    if values["svm"]["kernel"] != "linear":
        fail("svm.kernel", "only 'linear' is supported")
    if values["svm"]["class_weight"] not in ("balanced", "none"):
        fail("svm.class_weight", "must be 'balanced' or 'none'")
    if values["svm"]["probability"] is not True:
        fail("svm.probability", "posterior outputs are required (true)")
    if values["stacking"]["solver"] != "lbfgs" or values["stacking"]["meta"] != "logistic_regression":
        fail("stacking.solver", "only logistic_regression with lbfgs is supported")
    if values["knorau"]["k"] < 1:
        fail("knorau.k", "must be >= 1")
    if values["knorau"]["pool"] not in ("members", "representations"):
        fail("knorau.pool", "must be 'members' or 'representations'")
    cae = values["cae"]
    need = cae["depth"]
    if values["strategy"] in ("architecture", "combined"):
        need = max(need, values["architecture"]["depth"])
    if len(cae["filters"]) < need:
        fail("cae.filters", f"needs at least {need} filter counts (one per encoder block)")
    try:
        for depth in {cae["depth"], need}:
            _architecture(cae, depth).validate()
    except (ValueError, TypeError) as exc:
        fail("cae", str(exc))
    if values["target_manifest"] is None:
        fail("target_manifest", "is required")
    if check_paths:
        base = Path(base_dir or ".")

        def exists(key, p):
            path = Path(p) if Path(p).is_absolute() else base / p
            if not path.exists():
                fail(key, f"path does not exist: {path}")

        exists("target_manifest", values["target_manifest"])
        for ds in required_datasets(values):
            if ds not in values["auxiliary"]:
                fail("auxiliary", f"unknown dataset id {ds!r}")
            exists(ds, values["auxiliary"][ds])


def required_datasets(values):
    s = values["strategy"]
    ids = []
    if s in ("seeds", "architecture", "latent", "combined"):
        ids.append(values["cae"]["auxiliary"])
    if s in ("datasets", "combined"):
        ids.extend(values["datasets"]["ids"])
    return list(dict.fromkeys(ids))


def parse_config_text(text: str, base_dir=None, check_paths=True) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from exc
    values = merge(raw, text)
    validate(values, text, base_dir, check_paths)
    return ExperimentConfig(values, Path(base_dir) if base_dir else Path.cwd())


def parse_config(path, check_paths=True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config_text(text, path.resolve().parent, check_paths)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None

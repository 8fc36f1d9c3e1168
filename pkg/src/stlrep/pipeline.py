"""Experiment stages: train the representation pool, extract features on the
target set, run the LOSO evaluation. Each stage reads and writes artifacts
under the configured output directory so stages can run separately."""
from __future__ import annotations

import logging
from pathlib import Path

from .cae import load_model, save_model
from .config import ExperimentConfig
from .data import ingest_labeled, ingest_unlabeled
from .diversity import (
    RepresentationPool,
    build_pool,
    generate_dataset_specs,
    generate_depth_specs,
    generate_latent_specs,
    generate_seed_specs,
    read_specs,
    write_specs,
)
from .evaluation import ExperimentReport, evaluate_representations
from .features import extract_features, load_features, save_features

log = logging.getLogger(__name__)


class ArtifactError(RuntimeError):
    """A stage input is missing or does not match the configuration."""


def resolve_specs(config: ExperimentConfig):
    """Representation recipes for the configured strategy (combined = all four)."""
    s = config.strategy
    aux = config["cae"]["auxiliary"]
    specs = []
    if s in ("seeds", "combined"):
        specs += generate_seed_specs(config["seeds"]["count"], config.base_architecture(), config.master_seed, aux)
    if s in ("datasets", "combined"):
        specs += generate_dataset_specs(config["datasets"]["ids"], config.base_architecture())
    if s in ("architecture", "combined"):
        depth = config["architecture"]["depth"]
        specs += generate_depth_specs(depth, config.base_architecture(depth), aux)
    if s in ("latent", "combined"):
        specs += generate_latent_specs(config["latent"]["sizes"], config.base_architecture(), aux)
    return specs


def _paths(config):
    out = config.output_dir
    return {"reps": out / "reps", "features": out / "features", "reports": out / "reports"}


def _rep_file(config, i):
    return _paths(config)["reps"] / f"rep_{i:03d}.stlm"


def _feature_file(config, i):
    return _paths(config)["features"] / f"rep_{i:03d}.stlf"


def _require(path: Path, stage):
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run the '{stage}' stage first")


def _load_registry(config, specs):
    shape = tuple(config["cae"]["input_shape"][:2])
    ids = list(dict.fromkeys(s.dataset_id for s in specs))
    return {d: ingest_unlabeled(config.auxiliary_path(d), d, shape) for d in ids}


def train_pool(config: ExperimentConfig, jobs=None) -> RepresentationPool:
    specs = resolve_specs(config)
    registry = _load_registry(config, specs)
    log.info("training %d autoencoders", len(specs))
    return build_pool(specs, registry, jobs or config.jobs)


def gen_reps(config: ExperimentConfig, jobs=None) -> RepresentationPool:
    pool = train_pool(config, jobs)
    d = _paths(config)["reps"]
    d.mkdir(parents=True, exist_ok=True)
    write_specs(pool.specs, d / "specs.json")
    for i, (_, model) in enumerate(pool.members):
        save_model(model, _rep_file(config, i))
    return pool


def _stored_specs(config):
    path = _paths(config)["reps"] / "specs.json"
    _require(path, "gen-reps")
    specs = read_specs(path)
    if specs != resolve_specs(config):
        raise ArtifactError(f"{path} was generated from a different configuration; rerun 'gen-reps'")
    return specs


def _features_for(config, specs, encoders):
    target = ingest_labeled(config.target_manifest, tuple(config["cae"]["input_shape"][:2]))
    return [extract_features(e, target, {"representation": i, **s.to_dict()})
            for i, (s, e) in enumerate(zip(specs, encoders))]


def extract(config: ExperimentConfig):
    specs = _stored_specs(config)
    encoders = []
    for i in range(len(specs)):
        path = _rep_file(config, i)
        _require(path, "gen-reps")
        encoders.append(load_model(path))
    feats = _features_for(config, specs, encoders)
    d = _paths(config)["features"]
    d.mkdir(parents=True, exist_ok=True)
    for i, fm in enumerate(feats):
        save_features(fm, _feature_file(config, i))
    return feats


def _evaluate(config, specs, feats, jobs):
    report = evaluate_representations(feats, [dict(s.to_dict(), label=s.label) for s in specs], config.values,
                                      config.master_seed, jobs or config.jobs, echo=config.echo())
    report.write(_paths(config)["reports"])
    return report


def evaluate(config: ExperimentConfig, jobs=None) -> ExperimentReport:
    specs = _stored_specs(config)
    feats = []
    for i in range(len(specs)):
        path = _feature_file(config, i)
        _require(path, "extract")
        feats.append(load_features(path))
    return _evaluate(config, specs, feats, jobs)


def run_experiment(config: ExperimentConfig, jobs=None) -> ExperimentReport:
    """All stages in one process; artifacts are written as in the staged run."""
    pool = gen_reps(config, jobs)
    feats = _features_for(config, pool.specs, pool.encoders)
    d = _paths(config)["features"]
    d.mkdir(parents=True, exist_ok=True)
    for i, fm in enumerate(feats):
        save_features(fm, _feature_file(config, i))
    return _evaluate(config, pool.specs, feats, jobs)


def report_text(config: ExperimentConfig) -> str:
    path = _paths(config)["reports"] / "report.json"
    _require(path, "evaluate")
    return ExperimentReport.load(path).render_text()

"""Generators of diverse representation recipes and pool training.

Each strategy varies exactly one ingredient of the autoencoder recipe:
the initialisation seed, the auxiliary training set, the network depth, or
the latent size.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .cae import ArchitectureSpec, build_architecture, train
from .numerics import RandomStream

STRATEGIES = ("seed", "dataset", "architecture", "latent")
DEFAULT_AUXILIARY = "kyoto"
MAX_SEED = 1000


class PoolBuildError(RuntimeError):
    def __init__(self, index, message):
        super().__init__(f"representation {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class RepresentationSpec:
    strategy: str
    dataset_id: str
    architecture: ArchitectureSpec

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def seed(self):
        return self.architecture.seed

    @property
    def depth(self):
        return self.architecture.depth

    @property
    def latent_size(self):
        return self.architecture.latent_size

    @property
    def label(self):
        if self.strategy == "seed":
            return f"seed={self.seed}"
        if self.strategy == "dataset":
            return f"data={self.dataset_id}"
        if self.strategy == "architecture":
            return f"D={self.depth}"
        return f"I={self.latent_size}"

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "depth": self.depth,
            "latent_size": self.latent_size,
            "architecture": self.architecture.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        arch = ArchitectureSpec.from_dict(d["architecture"])
        return cls(d["strategy"], d["dataset_id"], arch)


@dataclass
class RepresentationPool:
    members: list  # of (RepresentationSpec, CaeModel)

    def __len__(self):
        return len(self.members)

    @property
    def specs(self):
        return [s for s, _ in self.members]

    @property
    def encoders(self):
        return [m.encoder() for _, m in self.members]


def generate_seed_specs(count: int, base: ArchitectureSpec, master_seed: int, dataset_id: str = DEFAULT_AUXILIARY):
    """``count`` recipes whose seeds are drawn from [0, 1000] without replacement."""
    if count < 1:
        raise ValueError(f"need at least one representation, got {count}")
    if count > MAX_SEED + 1:
        raise ValueError(f"only {MAX_SEED + 1} distinct seeds exist in [0, {MAX_SEED}], asked for {count}")
    base.validate()
    seeds = RandomStream(master_seed).child("seed-strategy").sample_without_replacement(MAX_SEED + 1, count)
    return [RepresentationSpec("seed", dataset_id, replace(base, seed=int(s))) for s in seeds]


def generate_dataset_specs(dataset_ids, base: ArchitectureSpec):
    ids = list(dataset_ids)
    if not ids:
        raise ValueError("dataset list is empty")
    dupes = sorted({d for d in ids if ids.count(d) > 1})
    if dupes:
        raise ValueError(f"duplicate dataset ids: {dupes}")
    base.validate()
    return [RepresentationSpec("dataset", d, base) for d in ids]


def generate_depth_specs(depth: int, base: ArchitectureSpec, dataset_id: str = DEFAULT_AUXILIARY):
    """Depths ``depth, depth-1, ..., 1`` sharing one latent size."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    full = base.filters if len(base.filters) >= depth else None
    if full is None:
        raise ValueError(f"base architecture lists {len(base.filters)} filter counts, depth {depth} needs {depth}")
    specs = []
    for d in range(depth, 0, -1):
        arch = replace(base, depth=d, filters=tuple(full[:d])).validate()
        specs.append(RepresentationSpec("architecture", dataset_id, arch))
    return specs


def generate_latent_specs(sizes, base: ArchitectureSpec, dataset_id: str = DEFAULT_AUXILIARY):
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("latent size list is empty")
    base.validate()
    return [RepresentationSpec("latent", dataset_id, replace(base, latent_size=s).validate()) for s in sizes]


def _train_member(args):
    index, spec, images = args
    with threadpool_limits(limits=1):
        try:
            return train(build_architecture(spec.architecture), images)
        except Exception as exc:  # re-raised with the member index by build_pool
            return PoolBuildError(index, f"{type(exc).__name__}: {exc}")


def build_pool(specs, registry, jobs: int = 1) -> RepresentationPool:
    """Train one autoencoder per spec.

    ``registry`` maps dataset ids to image arrays (N,H,W,C) or to objects
    with an ``images`` attribute. Members are independent, so ``jobs > 1``
    trains them in worker processes with identical results.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("spec list is empty")
    tasks = []
    for i, spec in enumerate(specs):
        if spec.dataset_id not in registry:
            raise PoolBuildError(i, f"unknown dataset id {spec.dataset_id!r}")
        data = registry[spec.dataset_id]
        tasks.append((i, spec, getattr(data, "images", data)))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_train_member, tasks))
    else:
        results = [_train_member(t) for t in tasks]
    for r in results:
        if isinstance(r, PoolBuildError):
            raise r
    return RepresentationPool(list(zip(specs, results)))


def write_specs(specs, path):
    """One JSON record per spec with every field spelled out."""
    records = [s.to_dict() for s in specs]
    Path(path).write_text(json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_specs(path):
    return [RepresentationSpec.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]

import numpy as np
import pytest

from stlrep.cae import ArchitectureSpec, default_filters
from stlrep.diversity import (
    PoolBuildError,
    RepresentationSpec,
    build_pool,
    generate_dataset_specs,
    generate_depth_specs,
    generate_latent_specs,
    generate_seed_specs,
    read_specs,
    write_specs,
)

BASE = ArchitectureSpec()
TINY = ArchitectureSpec(depth=1, latent_size=3, filters=(2,), input_shape=(4, 4, 1), epochs=1, batch_size=2)


def test_seed_specs_distinct_and_in_range():
    specs = generate_seed_specs(10, BASE, master_seed=0)
    seeds = [s.seed for s in specs]
    assert len(set(seeds)) == 10 and all(0 <= s <= 1000 for s in seeds)
    assert [s.seed for s in generate_seed_specs(10, BASE, 0)] == seeds
    assert [s.seed for s in generate_seed_specs(10, BASE, 1)] != seeds
    assert all(s.architecture.latent_size == 2500 and s.dataset_id == "kyoto" for s in specs)
    assert len({s.seed for s in generate_seed_specs(1001, BASE, 0)}) == 1001
    with pytest.raises(ValueError):
        generate_seed_specs(0, BASE, 0)
    with pytest.raises(ValueError):
        generate_seed_specs(1002, BASE, 0)


def test_dataset_specs():
    specs = generate_dataset_specs(["kyoto", "lfw-face", "lfw", "stl-10"], BASE)
    assert [s.dataset_id for s in specs] == ["kyoto", "lfw-face", "lfw", "stl-10"]
    assert len({s.architecture for s in specs}) == 1
    with pytest.raises(ValueError, match="duplicate"):
        generate_dataset_specs(["lfw", "lfw"], BASE)


def test_depth_specs():
    specs = generate_depth_specs(5, BASE)
    assert [s.depth for s in specs] == [5, 4, 3, 2, 1]
    assert specs[2].architecture.filters == default_filters(3)
    assert {s.latent_size for s in specs} == {2500}
    with pytest.raises(ValueError):
        generate_depth_specs(0, BASE)


def test_latent_specs():
    specs = generate_latent_specs([150, 200], BASE)
    assert [s.latent_size for s in specs] == [150, 200]
    assert specs[0].label == "I=150"


def test_specs_json_roundtrip(tmp_path):
    specs = generate_seed_specs(3, BASE, 0) + generate_depth_specs(2, ArchitectureSpec(depth=2, filters=(16, 32)))
    write_specs(specs, tmp_path / "s.json")
    assert read_specs(tmp_path / "s.json") == specs


def test_build_pool_and_errors():
    specs = generate_seed_specs(2, TINY, 0)
    imgs = np.random.default_rng(0).uniform(size=(4, 4, 4, 1))
    pool = build_pool(specs, {"kyoto": imgs})
    assert len(pool) == 2 and pool.specs == specs
    assert not np.array_equal(pool.members[0][1].params["enc0.kernels"], pool.members[1][1].params["enc0.kernels"])
    with pytest.raises(PoolBuildError, match="unknown dataset id 'kyoto'"):
        build_pool(specs, {})
    with pytest.raises(PoolBuildError, match="representation 0"):
        build_pool(specs, {"kyoto": np.zeros((2, 8, 8, 1))})


def test_build_pool_parallel_identical():
    specs = generate_seed_specs(3, TINY, 0)
    imgs = np.random.default_rng(0).uniform(size=(6, 4, 4, 1))
    a = build_pool(specs, {"kyoto": imgs}, jobs=1)
    b = build_pool(specs, {"kyoto": imgs}, jobs=3)
    for (_, ma), (_, mb) in zip(a.members, b.members):
        for k in ma.params:
            np.testing.assert_array_equal(ma.params[k], mb.params[k])


def test_spec_rejects_unknown_strategy():
    with pytest.raises(ValueError):
        RepresentationSpec("colour", "kyoto", BASE)

import pytest

from stlrep.config import parse_config
from stlrep.pipeline import ArtifactError, evaluate, extract, gen_reps, report_text, resolve_specs, run_experiment

from conftest import make_tiny_run


def test_resolve_specs_per_strategy(tmp_path):
    counts = {"seeds": 2, "datasets": 2, "architecture": 2, "latent": 2, "combined": 8}
    for strategy, n in counts.items():
        cfg = parse_config(make_tiny_run(tmp_path, strategy))
        specs = resolve_specs(cfg)
        assert len(specs) == n
    combined = resolve_specs(parse_config(make_tiny_run(tmp_path, "combined")))
    assert [s.strategy for s in combined] == ["seed"] * 2 + ["dataset"] * 2 + ["architecture"] * 2 + ["latent"] * 2
    assert [s.depth for s in combined[4:6]] == [2, 1]


def test_full_scale_combined_has_29_members(tmp_path):
    text = make_tiny_run(tmp_path).read_text()
    for old, new in (("count = 2", "count = 10"), ('ids = ["kyoto", "lfw"]', 'ids = ["kyoto", "lfw", "a", "b"]'),
                     ("depth = 2", "depth = 5"), ("sizes = [4, 8]", "sizes = [150, 200, 250, 300, 400, 500, 1000, 1500, 2000, 2500]"),
                     ('strategy = "seeds"', 'strategy = "combined"'), ("input_shape = [16, 16, 1]", "input_shape = [32, 32, 1]"),
                     ("filters = [4, 4]", "filters = [4, 4, 4, 4, 4]")):
        text = text.replace(old, new)
    path = tmp_path / "big.toml"
    path.write_text(text)
    specs = resolve_specs(parse_config(path, check_paths=False))
    assert len(specs) == 29


def test_staged_equals_single_process(tmp_path):
    staged = parse_config(make_tiny_run(tmp_path, out="staged"))
    gen_reps(staged)
    extract(staged)
    a = evaluate(staged)
    single = parse_config(make_tiny_run(tmp_path, out="single"))
    b = run_experiment(single)
    assert a.to_json() == b.to_json()
    assert (staged.output_dir / "reports" / "report.json").read_bytes() == \
        (single.output_dir / "reports" / "report.json").read_bytes()
    assert "Accuracy" in report_text(staged)
    for i in range(2):
        assert (staged.output_dir / "features" / f"rep_{i:03d}.stlf").read_bytes() == \
            (single.output_dir / "features" / f"rep_{i:03d}.stlf").read_bytes()


def test_missing_artifacts_named(tmp_path):
    cfg = parse_config(make_tiny_run(tmp_path))
    with pytest.raises(ArtifactError, match="specs.json"):
        evaluate(cfg)
    gen_reps(cfg)
    with pytest.raises(ArtifactError, match=r"rep_000\.stlf"):
        evaluate(cfg)


def test_stale_artifacts_detected(tmp_path):
    cfg = parse_config(make_tiny_run(tmp_path))
    gen_reps(cfg)
    other = parse_config(make_tiny_run(tmp_path, seed=5))
    with pytest.raises(ArtifactError, match="different configuration"):
        extract(other)

import itertools

import numpy as np
import pytest

import fsad


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auroc_matches_pairwise_definition():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 30))
        scores = rng.integers(0, 5, n).astype(float).tolist()
        labels = [0, 1] + rng.integers(0, 2, n - 2).tolist()
        assert fsad.auroc(scores, labels) == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)


def test_single_class_auroc_raises():
    with pytest.raises(fsad.Error, match="UndefinedMetric"):
        fsad.auroc([0.1, 0.2], [1, 1])


def test_pixel_auroc_perfect_map():
    mask = np.zeros((4, 4), np.uint8)
    mask[1:3, 1:3] = 1
    assert fsad.pixel_auroc([mask.astype(float)], [mask]) == 1.0


def test_resolved_defaults_and_overrides():
    siamese = fsad.resolve_config("host: siamese\ndataset: {synthetic: {categories: 2}}")
    assert "epochs: 50" in siamese and "sgd-momentum" in siamese
    recon = fsad.resolve_config("dataset: {synthetic: {categories: 2}}", host="masked-recon")
    assert "epochs: 1000" in recon and "adamw" in recon
    with pytest.raises(fsad.Error, match="ConfigError"):
        fsad.resolve_config("no_such_key: 1")


def test_gradcheck_passes_and_detects_corruption():
    assert all(c["passed"] for c in fsad.gradcheck(precisions=[64]))
    assert not all(c["passed"] for c in fsad.gradcheck(precisions=[64], corrupt_gradient=True))


def test_toy_sweep_end_to_end(tmp_path):
    data = fsad.generate_synthetic(tmp_path / "data", categories=3, seed=1, train_per_category=6, test_normal=3, test_anomalous=3)
    assert [c["name"] for c in data["categories"]] == ["cat0", "cat1", "cat2"]
    assert fsad.scan_dataset(tmp_path / "data") == data

    yaml = f"dataset: {{root: {tmp_path / 'data'}}}\nepochs: 1\n"
    kw = dict(toy=True, host="siamese", shots=[2], runs=1, output=str(tmp_path / "out"))
    root = fsad.train(yaml, **kw)
    records = fsad.evaluate(yaml, **kw)
    assert len(records) == 3
    assert all(0.0 <= r["image_auc"] <= 1.0 and r["method"] == "siamese+adv" for r in records)

    report = fsad.build_report(tmp_path / "out", "csv")
    assert report.splitlines()[0] == "method,cat0,cat1,cat2,Average"

    ckpt = f"{root}/K2/seed0/cat0/checkpoint.fsad"
    info = fsad.checkpoint_info(ckpt)
    assert info["host"] == "siamese" and info["resolution"] == 64
    csv = fsad.dump_features(ckpt, tmp_path / "data")
    assert len(csv.splitlines()) == 1 + 3 * 6

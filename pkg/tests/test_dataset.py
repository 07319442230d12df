import json

import numpy as np
import pytest
from PIL import Image

from crosspatch.bank import PatchEmbeddingBank, write_bank
from crosspatch.cli import main
from crosspatch.dataset import (
    DatasetError,
    discover_categories,
    list_test_images,
    list_train_images,
    load_binary_mask,
)
from conftest import make_meta


def _png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8), mode="L").save(path)


def build_mini_dataset(root, category="widget"):
    """Two good and two defective 32x32 test images, defect on patch (0, 0)."""
    cat = root / category
    rng = np.random.default_rng(0)
    for split in ("train/good", "test/good"):
        for i in range(2):
            _png(cat / split / f"{i:03d}.png", rng.integers(60, 80, (32, 32)))
    mask = np.zeros((32, 32))
    mask[2:14, 2:14] = 255
    for i in range(2):
        img = rng.integers(60, 80, (32, 32))
        img[2:14, 2:14] = 220
        _png(cat / "test" / "scratch" / f"{i:03d}.png", img)
        _png(cat / "ground_truth" / "scratch" / f"{i:03d}_mask.png", mask)
    return cat


def test_discover_and_listing(tmp_path):
    build_mini_dataset(tmp_path)
    assert discover_categories(tmp_path) == ["widget"]
    entries = list_test_images(tmp_path / "widget")
    names = [e[0] for e in entries]
    assert names == [
        "test/good/000.png", "test/good/001.png",
        "test/scratch/000.png", "test/scratch/001.png",
    ]
    assert [e[1] for e in entries] == [0, 0, 1, 1]
    assert entries[0][2] is None
    assert entries[2][2] is not None
    assert list_train_images(tmp_path / "widget") == [
        "train/good/000.png", "train/good/001.png",
    ]


def test_missing_mask_raises(tmp_path):
    cat = build_mini_dataset(tmp_path)
    (cat / "ground_truth" / "scratch" / "001_mask.png").unlink()
    with pytest.raises(DatasetError):
        list_test_images(cat)


def test_load_binary_mask(tmp_path):
    _png(tmp_path / "m.png", np.array([[0, 1], [128, 255]]))
    m = load_binary_mask(tmp_path / "m.png")
    assert m.tolist() == [[False, True], [True, True]]


def test_eval_directory_of_categories(tmp_path):
    from crosspatch.cli import main as cli_main
    from crosspatch.pipeline import run_eval

    runs = tmp_path / "runs"
    for seed, cat in ((1, "alpha"), (2, "beta")):
        bank = tmp_path / f"{cat}.pead"
        assert cli_main([
            "gen-fixtures", "--out", str(bank), "--seed", str(seed),
            "--n-images", "8", "--grid", "4x4", "--embed-dim", "8",
            "--dataset-tag", cat,
        ]) == 0
        assert cli_main([
            "score", "--bank-path", str(bank), "--output-dir", str(runs / cat),
            "--setting", "batch_zero_shot", "--batch-size", "8",
        ]) == 0
    report = run_eval(runs, dataset_root=None)
    assert [c.category for c in report.per_category] == ["alpha", "beta"]
    assert (runs / "eval_report.json").is_file()
    assert (runs / "eval_summary.png").is_file()
    vals = [c.image_auroc for c in report.per_category]
    assert report.macro_average["image_auroc"] == pytest.approx(np.mean(vals))


def test_eval_against_dataset_masks(tmp_path):
    build_mini_dataset(tmp_path / "data")
    # bank whose image names mirror the dataset's test split
    names = (
        "test/good/000.png", "test/good/001.png",
        "test/scratch/000.png", "test/scratch/001.png",
    )
    from dataclasses import replace

    meta = replace(
        make_meta(4, (2, 2), 4, tag="widget"), image_names=names
    )
    rng = np.random.default_rng(1)
    bank = PatchEmbeddingBank(
        meta=meta, embeddings=rng.standard_normal((4, 4, 4)).astype(np.float32)
    )
    bank_path = tmp_path / "widget.pead"
    write_bank(bank, bank_path)

    out = tmp_path / "run"
    maps_dir = out / "maps" / "g"
    maps_dir.mkdir(parents=True)
    per_image = []
    for name, label in zip(names, (0, 0, 1, 1)):
        scores = np.array([0.9, 0.05, 0.05, 0.05]) if label else np.full(4, 0.05)
        map_path = maps_dir / f"{name.replace('/', '__')}.npy"
        np.save(map_path, scores)
        per_image.append(
            {"name": name, "shots": None, "seed": None, "score": float(label),
             "map_path": str(map_path.relative_to(out))}
        )
    doc = {
        "config": {
            "setting": "batch_zero_shot", "dataset_tag": "widget",
            "grid": [2, 2], "image_size": [32, 32],
            "bank_path": str(bank_path),
        },
        "per_image": per_image,
        "per_seed_metrics": [],
        "aggregate": [],
    }
    results = out / "results.json"
    results.write_text(json.dumps(doc))

    rc = main(["eval", "--results", str(results), "--dataset-root", str(tmp_path / "data")])
    assert rc == 0
    rep = json.loads((out / "eval_report.json").read_text())
    cat = rep["per_category"][0]
    assert cat["category"] == "widget"
    assert cat["n_images"] == 4 and cat["n_anomalous"] == 2
    assert cat["image_auroc"] == 1.0 and cat["image_ap"] == 1.0
    # defect patch sits on the masked quadrant; upsampled map must rank
    # masked pixels far above the rest
    assert cat["pixel_auroc"] > 0.9
    assert cat["aupro"] > 0.5

"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. Budgets and tolerances
are asserted inside the tests; the four-thread speedup criterion states a
4-core machine as its environment and is skipped (with the measured value
reported) when fewer physical cores are available.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from crosspatch.align import RigidTransform, estimate_rigid, warp
from crosspatch.attnmask import attention_to_mask
from crosspatch.bank import normalize_bank
from crosspatch.cli import main as cli_main
from crosspatch.metrics import aupro, auroc, average_precision
from crosspatch.scoring import (
    BATCH_ZERO_SHOT,
    FEW_SHOT,
    PatchScoreMap,
    ScoringConfig,
    image_score,
    k_p,
    score_batch_zero_shot,
    score_few_shot,
)
from crosspatch.synthetic import SyntheticSpec, gen_synthetic, oracle_score
from conftest import normalized_from_array


def _pass(name, detail=""):
    print(f"ACCEPTANCE PASS: {name}" + (f" ({detail})" if detail else ""))


# --- 1. oracle equivalence ----------------------------------------------------

ORACLE_SIZES = [
    # (grid, batch_size, n_queries, n_prompts, embed_dim)
    ((3, 3), 4, 2, 3, 8),
    ((3, 3), 5, 2, 4, 16),
    ((4, 4), 4, 2, 4, 8),
    ((4, 4), 5, 3, 4, 32),
    ((4, 4), 6, 2, 5, 16),
    ((5, 5), 4, 2, 3, 8),
    ((5, 5), 5, 2, 4, 24),
    ((4, 5), 6, 2, 4, 16),
    ((5, 4), 5, 3, 5, 8),
    ((3, 4), 6, 2, 6, 12),
    ((4, 3), 5, 2, 8, 8),
    ((5, 5), 6, 2, 4, 16),
    ((3, 3), 8, 3, 6, 32),
    ((4, 4), 7, 2, 5, 24),
    ((2, 2), 8, 3, 8, 32),
    ((6, 6), 5, 2, 4, 16),
    ((6, 6), 4, 2, 5, 8),
    ((7, 7), 5, 2, 4, 16),
    ((8, 8), 4, 2, 4, 32),
    ((8, 8), 4, 2, 6, 16),
]


def test_oracle_equivalence():
    start = time.perf_counter()
    checked = 0
    for seed, (grid, b, n_q, n_p, d) in enumerate(ORACLE_SIZES, start=1):
        rows, cols = grid
        L = rows * cols
        rng = np.random.default_rng(seed)
        batch = normalized_from_array(rng.standard_normal((b, L, d)), grid=grid)
        queries = normalized_from_array(rng.standard_normal((n_q, L, d)), grid=grid)
        prompts = normalized_from_array(rng.standard_normal((n_p, L, d)), grid=grid)
        for reduction in ("nearest", "farthest"):
            cfg_b = ScoringConfig(setting=BATCH_ZERO_SHOT, per_image_reduction=reduction)
            fast = score_batch_zero_shot(batch, cfg_b)
            slow = oracle_score(batch, None, cfg_b)
            for (fm, fs), (sm, ss) in zip(fast, slow):
                assert np.max(np.abs(fm.scores - sm.scores)) < 1e-5
                assert abs(fs.value - ss.value) < 1e-5
                checked += 1
            cfg_f = ScoringConfig(setting=FEW_SHOT, per_image_reduction=reduction)
            fast = score_few_shot(queries, prompts, cfg_f)
            slow = oracle_score(queries, prompts, cfg_f)
            for (fm, fs), (sm, ss) in zip(fast, slow):
                assert np.max(np.abs(fm.scores - sm.scores)) < 1e-5
                assert abs(fs.value - ss.value) < 1e-5
                checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"oracle equivalence took {elapsed:.1f}s (budget 10s)"
    _pass("oracle equivalence", f"{checked} query comparisons in {elapsed:.1f}s")


# --- 2. planted-anomaly detection ----------------------------------------------

def test_planted_anomaly_detection():
    start = time.perf_counter()
    cfg = ScoringConfig(setting=BATCH_ZERO_SHOT)
    for seed in range(1, 11):
        spec = SyntheticSpec(
            seed=seed,
            n_images=16,
            grid=(8, 8),
            embed_dim=16,
            anomaly_rate=0.25,
            anomaly_patch_count=4,
            cluster_separation=math.pi / 3,
        )
        bank, labels, patch_labels = gen_synthetic(spec)
        norm = normalize_bank(bank)
        results = score_batch_zero_shot(norm, cfg)
        image_scores = [s.value for _, s in results]
        assert auroc(image_scores, labels) == 1.0, f"seed {seed}: image AUROC < 1"
        flat_scores = np.concatenate([m.scores for m, _ in results])
        flat_labels = patch_labels.reshape(len(labels), -1).ravel()
        pix = auroc(flat_scores, flat_labels)
        assert pix >= 0.99, f"seed {seed}: pixel AUROC {pix:.4f} < 0.99"
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"planted detection took {elapsed:.1f}s (budget 30s)"
    _pass("planted-anomaly detection", f"10 seeds in {elapsed:.1f}s")


# --- 3. metric oracles -----------------------------------------------------------

def _auroc_pairwise(scores, labels):
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return wins / (pos.size * neg.size)


def _ap_sweep(scores, labels):
    n_pos = labels.sum()
    prev_recall, ap = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= t
        tp = int((pred & (labels == 1)).sum())
        fp = int((pred & (labels == 0)).sum())
        ap += (tp / n_pos - prev_recall) * (tp / (tp + fp))
        prev_recall = tp / n_pos
    return ap


def test_metric_oracles():
    rng = np.random.default_rng(99)
    count = 0
    while count < 100:
        n = int(rng.integers(20, 501))
        scores = np.round(rng.random(n), 2)
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            continue
        assert abs(auroc(scores, labels) - _auroc_pairwise(scores, labels)) < 1e-9
        assert abs(average_precision(scores, labels) - _ap_sweep(scores, labels)) < 1e-9
        count += 1

    # constructed 16x16 aupro cases against the exhaustive-threshold oracle
    from test_metrics import aupro_exhaustive, rect_region

    mask = np.zeros((16, 16), bool)
    mask[5:8, 5:7] = True
    regions = [[rect_region(5, 8, 5, 7)]]

    exact = aupro([mask.astype(float)], [mask])
    assert abs(exact - 1.0) < 1e-3

    const = np.full((16, 16), 0.7)
    got = aupro([const], [mask], fpr_limit=1.0)
    oracle = aupro_exhaustive([const], regions, [mask], 1.0)
    assert abs(got - 0.5) < 1e-3, f"constant-map aupro {got:.4f} != 0.5"
    assert abs(got - oracle) < 1e-3

    graded = np.round(np.random.default_rng(5).random((16, 16)), 2)
    for limit in (0.3, 1.0):
        got = aupro([graded], [mask], fpr_limit=limit, n_thresholds=1001)
        oracle = aupro_exhaustive([graded], regions, [mask], limit)
        assert abs(got - oracle) < 1e-3
    _pass("metric oracles", "100 auroc/ap instances + aupro constructed cases")


# --- 4. formula checks ------------------------------------------------------------

def test_formula_checks():
    batch = ScoringConfig(setting=BATCH_ZERO_SHOT)
    few = ScoringConfig(setting=FEW_SHOT)
    assert k_p(63, batch) == 18
    for n in range(1, 101):
        assert k_p(n, few) == 1

    rng = np.random.default_rng(1)
    for _ in range(20):
        m = rng.random(50) * 2
        smap = PatchScoreMap(scores=m, grid=(50, 1))
        assert image_score(smap, None, few).value == m.max()

    assert list(attention_to_mask(np.array([0.0, 1.0, 0.5])).weights) == [0.5, 1.0, 1.0]
    assert list(attention_to_mask(np.array([10.0, 10.4, 20.0])).weights) == [0.5, 0.5, 1.0]
    masked = np.array([0.8, 0.8]) * np.array([0.5, 1.0])
    assert masked.tolist() == [0.4, 0.8]
    _pass("formula checks")


# --- 5. alignment recovery ----------------------------------------------------------

def test_alignment_recovery():
    from scipy.ndimage import gaussian_filter

    start = time.perf_counter()
    hits = 0
    for s in range(100):
        rng = np.random.default_rng(5000 + s)
        img = gaussian_filter(rng.random((128, 128)), 4) + 0.5 * gaussian_filter(
            rng.random((128, 128)), 1.2
        )
        img = (img - img.min()) / (img.max() - img.min())
        angle = rng.uniform(-15, 15)
        dx, dy = rng.uniform(-10, 10), rng.uniform(-10, 10)
        query = warp(img, RigidTransform(angle, dx, dy))
        a = math.radians(angle)
        ca, sa = math.cos(-a), math.sin(-a)
        expect_dx, expect_dy = -(dx * ca - dy * sa), -(dx * sa + dy * ca)
        t = estimate_rigid(img, query)
        if (
            abs(t.angle_deg - (-angle)) <= 1.0
            and abs(t.dx - expect_dx) <= 2.0
            and abs(t.dy - expect_dy) <= 2.0
        ):
            hits += 1
    elapsed = time.perf_counter() - start
    assert hits >= 95, f"only {hits}/100 recovered"
    assert elapsed < 60.0, f"alignment recovery took {elapsed:.1f}s (budget 60s)"
    _pass("alignment recovery", f"{hits}/100 in {elapsed:.1f}s")


# --- 6. kernel performance -------------------------------------------------------------

def _big_bank():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((64, 1024, 768), dtype=np.float32)
    return normalized_from_array(emb, grid=(32, 32), patch_size=14)


@pytest.fixture(scope="module")
def kernel_timings():
    bank = _big_bank()
    cfg = ScoringConfig(setting=BATCH_ZERO_SHOT)
    timings, outputs = {}, {}
    for threads in (1, 4, 2):
        t0 = time.perf_counter()
        outputs[threads] = score_batch_zero_shot(bank, cfg, n_threads=threads)
        timings[threads] = time.perf_counter() - t0
    return timings, outputs


def test_kernel_completes_in_budget_and_is_thread_invariant(kernel_timings):
    timings, outputs = kernel_timings
    assert timings[4] <= 60.0, f"4-thread scoring took {timings[4]:.1f}s (budget 60s)"
    base = outputs[1]
    for threads in (2, 4):
        for (ma, sa), (mb, sb) in zip(base, outputs[threads]):
            assert np.array_equal(ma.scores, mb.scores)
            assert sa.value == sb.value
    _pass(
        "kernel budget + thread-count bit-identity",
        f"B=64 L=1024 D=768: 1T {timings[1]:.1f}s, 2T {timings[2]:.1f}s, 4T {timings[4]:.1f}s",
    )


@pytest.mark.skipif(
    (os.cpu_count() or 1) < 4,
    reason="speedup criterion states a 4-core machine; fewer cores available here",
)
def test_kernel_speedup_four_threads(kernel_timings):
    timings, _ = kernel_timings
    speedup = timings[1] / timings[4]
    assert speedup >= 2.5, f"1->4 thread speedup {speedup:.2f}x < 2.5x"
    _pass("kernel 4-thread speedup", f"{speedup:.2f}x")


def test_kernel_observed_parallel_speedup(kernel_timings):
    """On any multi-core host our threading must yield a real speedup."""
    timings, _ = kernel_timings
    cores = os.cpu_count() or 1
    if cores < 2:
        pytest.skip("single-core host")
    speedup = timings[1] / min(timings[2], timings[4])
    assert speedup >= 1.4, f"multi-thread speedup {speedup:.2f}x on {cores} cores"
    _pass("kernel parallel speedup (host-scaled)", f"{speedup:.2f}x on {cores} cores")


# --- 7. CLI determinism -------------------------------------------------------------------

def _tree(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_cli_determinism(tmp_path, capsys):
    # identical invocations must produce byte-identical outputs; the inputs
    # (bank path, results path) are shared so only the rerun varies
    bank_a, bank_b = tmp_path / "a.pead", tmp_path / "b.pead"
    gen = [
        "gen-fixtures", "--seed", "3", "--n-images", "10",
        "--train-images", "4", "--grid", "5x5", "--embed-dim", "8",
    ]
    assert cli_main(gen + ["--out", str(bank_a)]) == 0
    assert cli_main(gen + ["--out", str(bank_b)]) == 0
    assert bank_a.read_bytes() == bank_b.read_bytes()
    assert (
        bank_a.with_suffix(".labels.json").read_bytes()
        == bank_b.with_suffix(".labels.json").read_bytes()
    )

    n_files = 0
    trees = {}
    for setting, extra in (
        ("few_shot", ["--shots", "1,2", "--seeds", "0,1"]),
        ("batch_zero_shot", ["--batch-size", "10"]),
    ):
        for tag in ("one", "two"):
            out = tmp_path / f"{setting}_{tag}"
            assert cli_main(
                ["score", "--bank-path", str(bank_a), "--output-dir", str(out),
                 "--setting", setting] + extra
            ) == 0
            trees[(setting, tag)] = _tree(out)
        a, b = trees[(setting, "one")], trees[(setting, "two")]
        assert a.keys() == b.keys()
        for key in a:
            assert a[key] == b[key], f"{setting}/{key} differs across reruns"
            n_files += 1

    results = tmp_path / "batch_zero_shot_one" / "results.json"
    for tag in ("one", "two"):
        assert cli_main(
            ["eval", "--results", str(results),
             "--output-dir", str(tmp_path / f"eval_{tag}")]
        ) == 0
    ea, eb = _tree(tmp_path / "eval_one"), _tree(tmp_path / "eval_two")
    assert ea.keys() == eb.keys()
    for key in ea:
        assert ea[key] == eb[key], f"eval/{key} differs across reruns"
        n_files += 1

    doc = json.loads(results.read_text())
    name = doc["per_image"][0]["name"]
    h1, h2 = tmp_path / "h1.png", tmp_path / "h2.png"
    for out in (h1, h2):
        assert cli_main(
            ["heatmap", "--results", str(results), "--image", name, "--out", str(out)]
        ) == 0
    assert h1.read_bytes() == h2.read_bytes()
    n_files += 1

    inspects = []
    for _ in range(2):
        capsys.readouterr()
        assert cli_main(["inspect", "--bank-path", str(bank_a)]) == 0
        inspects.append(capsys.readouterr().out)
    assert inspects[0] == inspects[1]
    _pass("CLI determinism", f"{n_files} artifacts byte-identical across reruns")

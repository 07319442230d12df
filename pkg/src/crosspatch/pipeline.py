"""Run orchestration behind the CLI: prompt sampling, batching, the
alignment/masking enhancements, per-seed metric aggregation and the
results-file schema."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import metrics as M
from .align import (
    RigidTransform,
    average_variant_scores,
    estimate_rigid,
    flip180_patch_grid,
    load_gray,
    roll_patch_grid,
)
from .attnmask import attention_to_mask
from .bank import (
    NormalizedBank,
    PatchEmbeddingBank,
    normalize_bank,
    read_bank,
    subset_normalized,
)
from .dataset import DatasetError, list_test_images, load_binary_mask
from .pixelmap import resize_map, to_pixel_map
from .report import write_eval_outputs, write_json
from .scoring import (
    BATCH_ZERO_SHOT,
    FEW_SHOT,
    ImageScore,
    PatchScoreMap,
    ScoringConfig,
    image_score,
    score_batch_zero_shot,
    score_few_shot,
)

# Alignment is skipped for well-aligned or 3D-rotating object sets; masking
# applies everywhere. Keys are bank dataset tags, matched case-insensitively.
DEFAULT_POLICY = {
    "mvtec": {"align": True, "mask": True},
    "visa": {"align": True, "mask": True},
    "ksdd": {"align": True, "mask": True},
    "dagm": {"align": True, "mask": True},
    "dtd-synthetic": {"align": True, "mask": True},
    "mpdd": {"align": False, "mask": True},
    "btad": {"align": False, "mask": True},
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    bank_path: str
    output_dir: str
    setting: str = FEW_SHOT
    shots: tuple[int, ...] = (1, 2, 4)
    seeds: tuple[int, ...] = (0, 1, 2)
    batch_size: int = 64
    align: bool | None = None  # None = per-dataset policy
    mask: bool | None = None
    rho: float = 1e-9
    kp_fraction: float = 0.3
    reduction: str = "nearest"
    dataset_root: str | None = None

    def validate(self) -> None:
        if self.setting not in (FEW_SHOT, BATCH_ZERO_SHOT):
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.setting == FEW_SHOT and any(s < 1 for s in self.shots):
            raise ConfigError("shot counts must be positive")
        if self.setting == BATCH_ZERO_SHOT and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for batch zero-shot")

    def scoring_config(self) -> ScoringConfig:
        try:
            return ScoringConfig(
                setting=self.setting,
                per_image_reduction=self.reduction,
                kp_fraction=self.kp_fraction,
                rho=self.rho,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def resolve_enhancements(cfg: RunConfig, dataset_tag: str, policy=None) -> tuple[bool, bool]:
    """Explicit flags win; otherwise the per-dataset policy; otherwise off."""
    table = dict(DEFAULT_POLICY)
    if policy:
        table.update({k.lower(): v for k, v in policy.items()})
    entry = table.get(dataset_tag.lower(), {})
    align = cfg.align if cfg.align is not None else bool(entry.get("align", False))
    mask = cfg.mask if cfg.mask is not None else bool(entry.get("mask", False))
    return align, mask


def partition_batches(n: int, batch_size: int) -> list[list[int]]:
    """Consecutive index chunks; a trailing single image joins the previous."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    chunks = [list(range(i, min(i + batch_size, n))) for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2].extend(chunks[-1])
        chunks.pop()
    return chunks


def labels_sidecar_path(bank_path: str | Path) -> Path:
    return Path(bank_path).with_suffix(".labels.json")


@dataclass
class LabelContext:
    """Which images are queries, which can serve as prompts, and any labels."""

    query_indices: list[int]
    prompt_pool: list[int]
    image_labels: dict[str, int] = field(default_factory=dict)
    patch_labels: dict[str, np.ndarray] = field(default_factory=dict)

    def label_of(self, name: str) -> int | None:
        return self.image_labels.get(name)


def build_label_context(bank: PatchEmbeddingBank, bank_path: str | Path) -> LabelContext:
    names = bank.meta.image_names
    train_idx = [i for i, n in enumerate(names) if n.startswith("train/")]
    query_idx = [i for i in range(len(names)) if i not in set(train_idx)]

    image_labels: dict[str, int] = {}
    patch_labels: dict[str, np.ndarray] = {}
    sidecar = labels_sidecar_path(bank_path)
    if sidecar.is_file():
        doc = json.loads(sidecar.read_text())
        image_labels = {k: int(v) for k, v in doc.get("image_labels", {}).items()}
        patch_labels = {
            k: np.asarray(v, dtype=np.int64)
            for k, v in doc.get("patch_labels", {}).items()
        }
    else:
        for n in names:
            if n.startswith("test/"):
                image_labels[n] = 0 if "/good/" in n else 1

    pool = train_idx or [
        i for i in query_idx if image_labels.get(names[i], 1) == 0
    ]
    return LabelContext(
        query_indices=query_idx,
        prompt_pool=pool,
        image_labels=image_labels,
        patch_labels=patch_labels,
    )


def _sanitize(name: str) -> str:
    return name.replace("/", "__")


def _image_file(dataset_root: str | None, dataset_tag: str, name: str) -> Path | None:
    if not dataset_root:
        return None
    for base in (Path(dataset_root) / dataset_tag, Path(dataset_root)):
        p = base / name
        if p.is_file():
            return p
    return None


def _grid_offset(t: RigidTransform, native_shape, grid) -> tuple[int, int]:
    """Translation in pixels of the estimation image, as whole grid cells."""
    h, w = native_shape
    rows, cols = grid
    return int(round(t.dy / h * rows)), int(round(t.dx / w * cols))


@dataclass
class QueryResult:
    name: str
    score: float
    score_map: PatchScoreMap


def _mask_weights(bank: PatchEmbeddingBank, index: int) -> np.ndarray | None:
    if bank.attention is None:
        return None
    return attention_to_mask(bank.attention[index]).weights


def _apply_mask_and_rescore(
    smap: PatchScoreMap, weights: np.ndarray | None, scfg: ScoringConfig
) -> tuple[PatchScoreMap, ImageScore]:
    if weights is None:
        return smap, image_score(smap, None, scfg)
    masked = PatchScoreMap(
        scores=smap.scores * weights, grid=smap.grid, query_name=smap.query_name
    )
    return masked, image_score(masked, None, scfg)


def _variant_grids(emb, deg, grid, offset):
    """(embeddings, degenerate) for [original, rolled, rolled+180]."""
    dr, dc = offset
    e1 = roll_patch_grid(emb, grid, dr, dc)
    d1 = roll_patch_grid(deg, grid, dr, dc)
    e2 = flip180_patch_grid(e1, grid)
    d2 = flip180_patch_grid(d1, grid)
    return [(emb, deg), (e1, d1), (e2, d2)]


def _unmap_variant(scores: np.ndarray, grid, offset, variant: int) -> np.ndarray:
    """Bring a variant's patch scores back into the original image frame."""
    dr, dc = offset
    if variant == 0:
        return scores
    if variant == 2:
        scores = flip180_patch_grid(scores, grid)
    return roll_patch_grid(scores, grid, -dr, -dc)


def score_batch(
    norm: NormalizedBank,
    bank: PatchEmbeddingBank,
    batch_idx: list[int],
    scfg: ScoringConfig,
    use_align: bool,
    use_mask: bool,
    offsets: list[tuple[int, int]] | None = None,
    n_threads: int = 1,
) -> list[QueryResult]:
    """Leave-one-out scoring of one batch, with optional enhancements.

    With alignment on, every image is scored in three forms (original,
    grid-aligned to the batch anchor, and its 180-degree flip) against the
    other images' originals; the three image scores are averaged and the
    back-mapped patch maps mean-pooled.
    """
    sub = subset_normalized(norm, batch_idx)
    grid = sub.meta.grid
    names = sub.meta.image_names
    out: list[QueryResult] = []

    if not use_align:
        for local, (smap, _s) in enumerate(score_batch_zero_shot(sub, scfg, n_threads)):
            weights = _mask_weights(bank, batch_idx[local]) if use_mask else None
            smap, final = _apply_mask_and_rescore(smap, weights, scfg)
            out.append(QueryResult(names[local], final.value, smap))
        return out

    b = len(batch_idx)
    if offsets is None:
        offsets = [(0, 0)] * b
    for local in range(b):
        offset = offsets[local]
        variants = _variant_grids(sub.embeddings[local], sub.degenerate[local], grid, offset)
        ref_idx = [j for j in range(b) if j != local]
        refs = subset_normalized(sub, ref_idx)
        vmeta = replace(
            sub.meta,
            image_names=tuple(f"{names[local]}#v{v}" for v in range(3)),
        )
        vbank = NormalizedBank(
            meta=vmeta,
            embeddings=np.stack([e for e, _ in variants]),
            degenerate=np.stack([d for _, d in variants]),
            attention=None,
        )
        weights = _mask_weights(bank, batch_idx[local]) if use_mask else None
        maps, scores = [], []
        for v, (smap, _s) in enumerate(score_few_shot(vbank, refs, scfg, n_threads)):
            unmapped = PatchScoreMap(
                scores=_unmap_variant(smap.scores, grid, offset, v),
                grid=grid,
                query_name=names[local],
            )
            masked, final = _apply_mask_and_rescore(unmapped, weights, scfg)
            maps.append(masked.scores)
            scores.append(final.value)
        mean_map = PatchScoreMap(
            scores=np.mean(maps, axis=0), grid=grid, query_name=names[local]
        )
        out.append(QueryResult(names[local], average_variant_scores(scores), mean_map))
    return out


def batch_grid_offsets(
    bank: PatchEmbeddingBank,
    batch_idx: list[int],
    dataset_root: str | None,
) -> list[tuple[int, int]] | None:
    """Whole-patch offsets aligning every batch image onto the first one
    (the anchor), estimated from the source images when available."""
    if not dataset_root:
        return None
    names = bank.meta.image_names
    anchor_path = _image_file(dataset_root, bank.meta.dataset_tag, names[batch_idx[0]])
    if anchor_path is None:
        return None
    anchor = load_gray(anchor_path)
    offsets = [(0, 0)]
    for i in batch_idx[1:]:
        p = _image_file(dataset_root, bank.meta.dataset_tag, names[i])
        if p is None:
            offsets.append((0, 0))
        else:
            t = estimate_rigid(anchor, load_gray(p))
            offsets.append(_grid_offset(t, anchor.shape, bank.meta.grid))
    return offsets


def fewshot_prompt_bank(
    norm: NormalizedBank,
    bank: PatchEmbeddingBank,
    prompt_indices: list[int],
    query_name: str | None,
    dataset_root: str | None,
    use_align: bool,
) -> NormalizedBank:
    """Prompt bank for one query; with alignment on, each prompt contributes
    its original, grid-aligned and 180-degree-flipped embeddings."""
    base = subset_normalized(norm, prompt_indices)
    if not use_align:
        return base
    grid = base.meta.grid
    names = []
    embs, degs = [], []
    query_img = None
    if dataset_root and query_name is not None:
        qp = _image_file(dataset_root, bank.meta.dataset_tag, query_name)
        if qp is not None:
            query_img = load_gray(qp)
    for local, src in enumerate(prompt_indices):
        offset = (0, 0)
        if query_img is not None:
            pp = _image_file(dataset_root, bank.meta.dataset_tag, bank.meta.image_names[src])
            if pp is not None:
                t = estimate_rigid(query_img, load_gray(pp))
                offset = _grid_offset(t, query_img.shape, grid)
        for v, (e, d) in enumerate(
            _variant_grids(base.embeddings[local], base.degenerate[local], grid, offset)
        ):
            embs.append(e)
            degs.append(d)
            names.append(f"{base.meta.image_names[local]}#v{v}")
    meta = replace(base.meta, image_names=tuple(names))
    return NormalizedBank(
        meta=meta,
        embeddings=np.stack(embs),
        degenerate=np.stack(degs),
        attention=None,
    )


def _population_mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _group_metrics(
    results: list[QueryResult], ctx: LabelContext
) -> dict[str, float | None]:
    labels = [ctx.label_of(r.name) for r in results]
    known = [(r, l) for r, l in zip(results, labels) if l is not None]
    doc: dict[str, float | None] = {
        "image_auroc": None,
        "image_ap": None,
        "pixel_auroc": None,
        "aupro": None,
    }
    if known:
        scores = [r.score for r, _ in known]
        labs = [l for _, l in known]
        if 0 < sum(labs) < len(labs):
            doc["image_auroc"] = M.auroc(scores, labs)
            doc["image_ap"] = M.average_precision(scores, labs)
    with_patches = [r for r in results if r.name in ctx.patch_labels]
    if with_patches:
        flat_scores = np.concatenate([r.score_map.scores for r in with_patches])
        flat_labels = np.concatenate(
            [ctx.patch_labels[r.name].ravel() for r in with_patches]
        )
        if 0 < flat_labels.sum() < flat_labels.size:
            doc["pixel_auroc"] = M.auroc(flat_scores, flat_labels)
            doc["aupro"] = M.aupro(
                [r.score_map.as_grid() for r in with_patches],
                [ctx.patch_labels[r.name] for r in with_patches],
            )
    return doc


def run_score(cfg: RunConfig, policy=None, n_threads: int = 1) -> dict:
    """Execute a scoring run and write results.json plus per-query maps."""
    cfg.validate()
    bank = read_bank(cfg.bank_path)
    norm = normalize_bank(bank)
    ctx = build_label_context(bank, cfg.bank_path)
    use_align, use_mask = resolve_enhancements(cfg, bank.meta.dataset_tag, policy)
    scfg = cfg.scoring_config()
    out_dir = Path(cfg.output_dir)
    maps_dir = out_dir / "maps"
    names = bank.meta.image_names

    per_image: list[dict] = []
    per_seed_metrics: list[dict] = []
    aggregate: list[dict] = []

    def emit(group_tag: str, shots, seed, results: list[QueryResult]) -> dict:
        gdir = maps_dir / group_tag
        gdir.mkdir(parents=True, exist_ok=True)
        for r in results:
            map_path = gdir / f"{_sanitize(r.name)}.npy"
            tmp = map_path.with_name(map_path.name + ".tmp")
            with open(tmp, "wb") as fh:
                np.save(fh, r.score_map.scores)
            os.replace(tmp, map_path)
            per_image.append(
                {
                    "name": r.name,
                    "shots": shots,
                    "seed": seed,
                    "score": r.score,
                    "map_path": str(map_path.relative_to(out_dir)),
                }
            )
        m = _group_metrics(results, ctx)
        per_seed_metrics.append({"shots": shots, "seed": seed, **m})
        return m

    if cfg.setting == FEW_SHOT:
        if not ctx.prompt_pool:
            raise DatasetError("no prompt-eligible (normal/train) images in the bank")
        for shots in cfg.shots:
            if shots > len(ctx.prompt_pool):
                raise ConfigError(
                    f"{shots} shots requested but only {len(ctx.prompt_pool)} prompt images"
                )
            group_rows = []
            for seed in cfg.seeds:
                rng = np.random.default_rng(seed)
                prompts = sorted(
                    int(i)
                    for i in rng.choice(ctx.prompt_pool, size=shots, replace=False)
                )
                query_idx = [i for i in ctx.query_indices if i not in set(prompts)]
                qsub = subset_normalized(norm, query_idx)
                results = []
                if use_align and cfg.dataset_root:
                    # per-query prompt variants, estimated against that query
                    for local, qi in enumerate(query_idx):
                        pbank = fewshot_prompt_bank(
                            norm, bank, prompts, names[qi], cfg.dataset_root, True
                        )
                        qbank = subset_normalized(norm, [qi])
                        (smap, _s) = score_few_shot(qbank, pbank, scfg, n_threads)[0]
                        weights = _mask_weights(bank, qi) if use_mask else None
                        smap, final = _apply_mask_and_rescore(smap, weights, scfg)
                        results.append(QueryResult(names[qi], final.value, smap))
                else:
                    pbank = fewshot_prompt_bank(
                        norm, bank, prompts, None, cfg.dataset_root, use_align
                    )
                    scored = score_few_shot(qsub, pbank, scfg, n_threads)
                    for local, (smap, _s) in enumerate(scored):
                        qi = query_idx[local]
                        weights = _mask_weights(bank, qi) if use_mask else None
                        smap, final = _apply_mask_and_rescore(smap, weights, scfg)
                        results.append(QueryResult(names[qi], final.value, smap))
                group_rows.append(emit(f"shots{shots}_seed{seed}", shots, seed, results))
            agg = {"shots": shots, "mean": {}, "std": {}}
            for key in ("image_auroc", "image_ap", "pixel_auroc", "aupro"):
                vals = [g[key] for g in group_rows if g[key] is not None]
                if vals:
                    mean, std = _population_mean_std(vals)
                    agg["mean"][key] = mean
                    agg["std"][key] = std
            aggregate.append(agg)
    else:
        if len(ctx.query_indices) < 2:
            raise DatasetError("batch zero-shot needs at least 2 query images")
        results = []
        for batch_idx_local in partition_batches(len(ctx.query_indices), cfg.batch_size):
            batch_idx = [ctx.query_indices[i] for i in batch_idx_local]
            offsets = (
                batch_grid_offsets(bank, batch_idx, cfg.dataset_root) if use_align else None
            )
            results.extend(
                score_batch(
                    norm, bank, batch_idx, scfg, use_align, use_mask, offsets, n_threads
                )
            )
        m = emit("batch", None, None, results)
        agg = {"shots": None, "mean": {}, "std": {}}
        for key, val in m.items():
            if val is not None:
                agg["mean"][key] = val
                agg["std"][key] = 0.0
        aggregate.append(agg)

    doc = {
        "config": {
            "setting": cfg.setting,
            "shots": list(cfg.shots),
            "seeds": list(cfg.seeds),
            "batch_size": cfg.batch_size,
            "align": use_align,
            "mask": use_mask,
            "rho": cfg.rho,
            "kp_fraction": cfg.kp_fraction,
            "reduction": cfg.reduction,
            "bank_path": str(cfg.bank_path),
            "dataset_root": cfg.dataset_root,
            "dataset_tag": bank.meta.dataset_tag,
            "grid": list(bank.meta.grid),
            "image_size": list(bank.meta.image_size),
        },
        "per_image": per_image,
        "per_seed_metrics": per_seed_metrics,
        "aggregate": aggregate,
    }
    write_json(doc, out_dir / "results.json")
    return doc


def _first_group(doc: dict, shots=None, seed=None) -> list[dict]:
    entries = doc["per_image"]
    groups = sorted(
        {(e["shots"], e["seed"]) for e in entries},
        key=lambda g: (g[0] is not None, g[0], g[1] is not None, g[1]),
    )
    if not groups:
        raise DatasetError("results file contains no per-image entries")
    want = groups[0]
    if shots is not None or seed is not None:
        match = [g for g in groups if (shots is None or g[0] == shots) and (seed is None or g[1] == seed)]
        if not match:
            raise ConfigError(f"no result group with shots={shots} seed={seed}")
        want = match[0]
    return [e for e in entries if (e["shots"], e["seed"]) == want]


def _load_map(results_dir: Path, entry: dict, grid) -> PatchScoreMap:
    scores = np.load(results_dir / entry["map_path"])
    return PatchScoreMap(scores=scores, grid=tuple(grid), query_name=entry["name"])


def evaluate_results(
    results_path: str | Path,
    dataset_root: str | None,
    shots=None,
    seed=None,
    sigma: float = 4.0,
) -> M.CategoryMetrics:
    """Metrics for one results file (one category)."""
    results_path = Path(results_path)
    doc = json.loads(results_path.read_text())
    results_dir = results_path.parent
    config = doc["config"]
    grid = config["grid"]
    category = config["dataset_tag"] or "default"
    entries = _first_group(doc, shots, seed)

    scores = [e["score"] for e in entries]
    if dataset_root:
        cat_dir = Path(dataset_root) / category
        if not cat_dir.is_dir():
            cat_dir = Path(dataset_root)
        gt = {rel: (label, mask) for rel, label, mask in list_test_images(cat_dir)}
        labels, masks = [], []
        for e in entries:
            if e["name"] not in gt:
                raise DatasetError(f"{e['name']} not found under {cat_dir}")
            labels.append(gt[e["name"]][0])
        any_anomalous = False
        for e in entries:
            mask_path = gt[e["name"]][1]
            if mask_path is not None:
                masks.append(load_binary_mask(mask_path))
                any_anomalous = True
            else:
                # normal image: all-negative mask at the image's own size
                with PILImage.open(cat_dir / e["name"]) as img:
                    w, h = img.size
                masks.append(np.zeros((h, w), dtype=bool))
        if not any_anomalous:
            raise DatasetError(f"category {category} has no anomalous test image")
        pixel_scores, pixel_labels_flat = [], []
        pmaps, pmasks = [], []
        for e, gt_mask in zip(entries, masks):
            smap = _load_map(results_dir, e, grid)
            pmap = to_pixel_map(smap, tuple(config["image_size"]), sigma=sigma)
            pmap = resize_map(pmap, *gt_mask.shape)
            pmaps.append(pmap.values)
            pmasks.append(gt_mask)
            pixel_scores.append(pmap.values.ravel())
            pixel_labels_flat.append(gt_mask.ravel())
        pixel_auroc = M.auroc(np.concatenate(pixel_scores), np.concatenate(pixel_labels_flat))
        aupro_val = M.aupro(pmaps, pmasks)
    else:
        sidecar = labels_sidecar_path(config["bank_path"])
        if not sidecar.is_file():
            raise DatasetError(
                "no dataset root given and no labels sidecar next to the bank"
            )
        side = json.loads(sidecar.read_text())
        image_labels = side.get("image_labels", {})
        patch_labels = side.get("patch_labels", {})
        labels = []
        for e in entries:
            if e["name"] not in image_labels:
                raise DatasetError(f"no label for {e['name']} in {sidecar}")
            labels.append(int(image_labels[e["name"]]))
        pmaps, pmasks, flat_s, flat_l = [], [], [], []
        for e in entries:
            smap = _load_map(results_dir, e, grid)
            pl = np.asarray(patch_labels.get(e["name"]), dtype=np.int64)
            if pl.ndim != 2:
                raise DatasetError(f"no patch labels for {e['name']}")
            pmaps.append(smap.as_grid())
            pmasks.append(pl)
            flat_s.append(smap.scores)
            flat_l.append(pl.ravel())
        pixel_auroc = M.auroc(np.concatenate(flat_s), np.concatenate(flat_l))
        aupro_val = M.aupro(pmaps, pmasks)

    return M.CategoryMetrics(
        category=category,
        image_auroc=M.auroc(scores, labels),
        image_ap=M.average_precision(scores, labels),
        pixel_auroc=pixel_auroc,
        aupro=aupro_val,
        n_images=len(entries),
        n_anomalous=int(sum(labels)),
    )


def run_eval(
    results_path: str | Path,
    dataset_root: str | None,
    output_dir: str | Path | None = None,
    shots=None,
    seed=None,
    sigma: float = 4.0,
) -> M.EvalReport:
    """Evaluate one results file or a directory of per-category results."""
    results_path = Path(results_path)
    if results_path.is_dir():
        files = sorted(results_path.glob("*/results.json"))
        if (results_path / "results.json").is_file():
            files.insert(0, results_path / "results.json")
        if not files:
            raise DatasetError(f"no results.json under {results_path}")
        default_out = results_path
    else:
        files = [results_path]
        default_out = results_path.parent
    cats = [evaluate_results(f, dataset_root, shots, seed, sigma) for f in files]
    report = M.build_report(cats)
    write_eval_outputs(report, Path(output_dir) if output_dir else default_out)
    return report


def render_query_heatmap(
    results_path: str | Path,
    image_name: str,
    out_path: str | Path,
    sigma: float = 4.0,
    normalization="per_image",
) -> None:
    from .pixelmap import render_heatmap

    results_path = Path(results_path)
    doc = json.loads(results_path.read_text())
    config = doc["config"]
    entry = next((e for e in doc["per_image"] if e["name"] == image_name), None)
    if entry is None:
        raise DatasetError(f"image {image_name!r} not present in results")
    smap = _load_map(results_path.parent, entry, config["grid"])
    pmap = to_pixel_map(smap, tuple(config["image_size"]), sigma=sigma)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    render_heatmap(pmap, out_path, normalization)

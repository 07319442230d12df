"""Cross-patch cosine-distance anomaly scoring.

Every query patch is matched against the patches of each reference image
(min or max cosine distance per image), the per-image match values are
aggregated over the top reference images into a patch score, and the top
patch scores are averaged into the image score.

All operations are pure functions over immutable banks. The heavy kernel
computes 1 - Q @ R^T on pre-normalized float32 banks, one reference image
at a time, with the per-image reduction fused so the full distance tensor
is never materialized. Results are bitwise independent of ``n_threads``:
worker tasks write disjoint slots and all order-sensitive reductions run
after the join in fixed index order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .bank import NormalizedBank

FEW_SHOT = "few_shot"
BATCH_ZERO_SHOT = "batch_zero_shot"


@dataclass(frozen=True)
class ScoringConfig:
    """Free parameters of the scoring pipeline.

    ``rho`` controls the image-score aggregation depth K_I = max(1,
    floor(rho * L)); the default is small enough that K_I = 1 (pure max)
    for any realistic patch count. ``kp_fraction`` only matters in the
    batch zero-shot setting.
    """

    setting: str = FEW_SHOT
    per_image_reduction: str = "nearest"  # min over ref patches; "farthest" = max
    image_selection: str = "largest_u"
    kp_fraction: float = 0.3
    rho: float = 1e-9
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.setting not in (FEW_SHOT, BATCH_ZERO_SHOT):
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.per_image_reduction not in ("nearest", "farthest"):
            raise ValueError(f"unknown reduction {self.per_image_reduction!r}")
        if self.image_selection not in ("largest_u", "smallest_u"):
            raise ValueError(f"unknown image_selection {self.image_selection!r}")
        if not 0.0 < self.kp_fraction <= 1.0:
            raise ValueError("kp_fraction must be in (0, 1]")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")


@dataclass
class PatchScoreMap:
    """Per-query vector of L patch anomaly scores on a (rows, cols) grid."""

    scores: np.ndarray  # (L,) float64, values in [0, 2]
    grid: tuple[int, int]
    query_name: str = ""

    def as_grid(self) -> np.ndarray:
        return self.scores.reshape(self.grid)


@dataclass
class ImageScore:
    value: float
    contributing_patches: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    query_name: str = ""


def distance_matrix(
    query_patches: np.ndarray,
    ref_patches: np.ndarray,
    q_degenerate: np.ndarray | None = None,
    r_degenerate: np.ndarray | None = None,
) -> np.ndarray:
    """Pairwise cosine distances 1 - <q_j, r_k> between unit-norm patch sets.

    Rows/columns flagged degenerate are set to exactly 1.0 (the orthogonal
    value); everything is clipped to the valid [0, 2] range.
    """
    q = np.asarray(query_patches)
    r = np.asarray(ref_patches)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape} vs {r.shape}")
    dist = 1.0 - q @ r.T
    np.clip(dist, 0.0, 2.0, out=dist)
    if q_degenerate is not None:
        dist[np.asarray(q_degenerate, bool), :] = 1.0
    if r_degenerate is not None:
        dist[:, np.asarray(r_degenerate, bool)] = 1.0
    return dist


def per_image_match(dist: np.ndarray, reduction: str = "nearest") -> np.ndarray:
    """Collapse an L_q x L_r distance matrix to one value per query patch."""
    dist = np.asarray(dist)
    if dist.ndim != 2 or dist.shape[1] == 0:
        raise ValueError("reference image has no patches")
    if reduction == "nearest":
        return dist.min(axis=1)
    if reduction == "farthest":
        return dist.max(axis=1)
    raise ValueError(f"unknown reduction {reduction!r}")


def k_p(n_refs: int, cfg: ScoringConfig) -> int:
    """Number of reference images aggregated per patch score."""
    if n_refs < 1:
        raise ValueError("need at least one reference image")
    if cfg.setting == FEW_SHOT:
        return 1
    return min(n_refs, max(1, math.floor(cfg.kp_fraction * n_refs)))


def k_i(n_patches: int, cfg: ScoringConfig) -> int:
    """Number of patch scores averaged into the image score."""
    return min(n_patches, max(1, math.floor(cfg.rho * n_patches)))


def patch_scores(
    u_matrix: np.ndarray,
    cfg: ScoringConfig,
    grid: tuple[int, int] | None = None,
    query_name: str = "",
) -> PatchScoreMap:
    """Aggregate per-image match values (L x N) into patch scores.

    For each patch the K_P reference images with the largest (or, when
    configured, smallest) match value are selected and their values
    averaged; ties at the selection boundary are broken by ascending
    image index, which cannot change the mean.
    """
    u = np.asarray(u_matrix, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError("u_matrix must be L x N")
    L, n = u.shape
    k = k_p(n, cfg)
    if k == n:
        m = u.mean(axis=1)
    elif cfg.image_selection == "largest_u":
        m = np.partition(u, n - k, axis=1)[:, n - k :].mean(axis=1)
    else:
        m = np.partition(u, k - 1, axis=1)[:, :k].mean(axis=1)
    if grid is None:
        grid = (L, 1)
    return PatchScoreMap(scores=m, grid=grid, query_name=query_name)


def image_score(
    score_map: PatchScoreMap,
    weights: np.ndarray | None,
    cfg: ScoringConfig,
) -> ImageScore:
    """Mean of the K_I largest (optionally mask-weighted) patch scores."""
    m = np.asarray(score_map.scores, dtype=np.float64)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != m.shape:
            raise ValueError(f"mask length {w.shape} != scores {m.shape}")
        m = m * w
    k = k_i(m.size, cfg)
    order = np.argsort(-m, kind="stable")[:k]
    value = float(m[order].mean())
    return ImageScore(
        value=value,
        contributing_patches=np.sort(order),
        query_name=score_map.query_name,
    )


def _match_block(
    q_emb: np.ndarray,
    q_deg: np.ndarray | None,
    r_emb: np.ndarray,
    r_deg: np.ndarray | None,
    reduction: str,
) -> np.ndarray:
    """u column for one (query image, reference image) pair, fused reduction."""
    dist = 1.0 - q_emb @ r_emb.T
    np.clip(dist, 0.0, 2.0, out=dist)
    if r_deg is not None and r_deg.any():
        dist[:, r_deg] = 1.0
    u = dist.min(axis=1) if reduction == "nearest" else dist.max(axis=1)
    if q_deg is not None and q_deg.any():
        u[q_deg] = 1.0
    return u


def _pair_reduce(
    emb_b: np.ndarray,
    deg_b: np.ndarray | None,
    emb_i: np.ndarray,
    deg_i: np.ndarray | None,
    reduction: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Both directions of one unordered pair from a single GEMM."""
    dist = 1.0 - emb_b @ emb_i.T
    np.clip(dist, 0.0, 2.0, out=dist)
    b_deg_any = deg_b is not None and deg_b.any()
    i_deg_any = deg_i is not None and deg_i.any()
    if b_deg_any:
        dist[deg_b, :] = 1.0
    if i_deg_any:
        dist[:, deg_i] = 1.0
    if reduction == "nearest":
        u_b, u_i = dist.min(axis=1), dist.min(axis=0)
    else:
        u_b, u_i = dist.max(axis=1), dist.max(axis=0)
    # a degenerate patch must see 1.0 even against other degenerates
    if b_deg_any:
        u_b[deg_b] = 1.0
    if i_deg_any:
        u_i[deg_i] = 1.0
    return u_b, u_i


def _degenerate_or_none(bank: NormalizedBank, i: int) -> np.ndarray | None:
    deg = bank.degenerate[i]
    return deg if deg.any() else None


def score_few_shot(
    query_bank: NormalizedBank,
    prompt_bank: NormalizedBank,
    cfg: ScoringConfig | None = None,
    n_threads: int = 1,
) -> list[tuple[PatchScoreMap, ImageScore]]:
    """Score every query image against a bank of normal prompt images."""
    cfg = cfg or ScoringConfig(setting=FEW_SHOT)
    if query_bank.meta.embed_dim != prompt_bank.meta.embed_dim:
        raise ValueError("embed_dim mismatch between query and prompt banks")
    n_prompts = prompt_bank.meta.n_images
    if n_prompts < 1:
        raise ValueError("prompt bank is empty")
    grid = query_bank.meta.grid
    names = query_bank.meta.image_names
    reduction = cfg.per_image_reduction

    def one_query(q: int) -> np.ndarray:
        q_emb = query_bank.embeddings[q]
        q_deg = _degenerate_or_none(query_bank, q)
        u = np.empty((q_emb.shape[0], n_prompts), dtype=np.float32)
        for i in range(n_prompts):
            u[:, i] = _match_block(
                q_emb,
                q_deg,
                prompt_bank.embeddings[i],
                _degenerate_or_none(prompt_bank, i),
                reduction,
            )
        return u

    n_queries = query_bank.meta.n_images
    with threadpool_limits(limits=1):
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                u_matrices = list(pool.map(one_query, range(n_queries)))
        else:
            u_matrices = [one_query(q) for q in range(n_queries)]

    results = []
    for q, u in enumerate(u_matrices):
        smap = patch_scores(u, cfg, grid=grid, query_name=names[q])
        results.append((smap, image_score(smap, None, cfg)))
    return results


def score_batch_zero_shot(
    batch_bank: NormalizedBank,
    cfg: ScoringConfig | None = None,
    n_threads: int = 1,
) -> list[tuple[PatchScoreMap, ImageScore]]:
    """Leave-one-out scoring: each image queried against the other B-1.

    Each unordered image pair shares one GEMM; the two directed match
    columns are reduced from the same distance block.
    """
    cfg = cfg or ScoringConfig(setting=BATCH_ZERO_SHOT)
    b = batch_bank.meta.n_images
    if b < 2:
        raise ValueError(f"batch zero-shot needs at least 2 images, got {b}")
    L = batch_bank.meta.n_patches
    emb = batch_bank.embeddings
    deg = [_degenerate_or_none(batch_bank, i) for i in range(b)]
    reduction = cfg.per_image_reduction

    u_all = np.empty((b, L, b), dtype=np.float32)

    def do_pair(pair: tuple[int, int]) -> None:
        x, y = pair
        u_x, u_y = _pair_reduce(emb[x], deg[x], emb[y], deg[y], reduction)
        u_all[x, :, y] = u_x
        u_all[y, :, x] = u_y

    pairs = [(x, y) for x in range(b) for y in range(x + 1, b)]
    with threadpool_limits(limits=1):
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                list(pool.map(do_pair, pairs, chunksize=8))
        else:
            for p in pairs:
                do_pair(p)

    others = [np.array([i for i in range(b) if i != q]) for q in range(b)]
    results = []
    for q in range(b):
        u = u_all[q][:, others[q]]
        smap = patch_scores(
            u, cfg, grid=batch_bank.meta.grid, query_name=batch_bank.meta.image_names[q]
        )
        results.append((smap, image_score(smap, None, cfg)))
    return results

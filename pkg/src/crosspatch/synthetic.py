"""Seeded synthetic banks with planted anomalies, plus a naive scoring oracle.

Generation is counter-based (Philox) and keyed by (seed, stream, image,
patch), so any parallel generation order yields bit-identical fixtures on
every platform. The oracle re-implements the scoring semantics as plain
nested loops and is the equality reference for the optimized kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bank import NormalizedBank, PatchEmbeddingBank, StoreMetadata, normalize_bank
from .scoring import (
    BATCH_ZERO_SHOT,
    ImageScore,
    PatchScoreMap,
    ScoringConfig,
    k_i,
    k_p,
)

_MASK64 = (1 << 64) - 1
_KEY_SALT = 0x9E3779B97F4A7C15
_PATCH_PIXELS = 16  # pixel geometry of synthetic banks

_STREAM_PATCHES = 0
_STREAM_LABELS = 1
_STREAM_PLACEMENT = 2


def _stream(seed: int, stream: int, a: int = 0, b: int = 0) -> np.random.Generator:
    counter = [0, stream & _MASK64, a & _MASK64, b & _MASK64]
    return np.random.Generator(
        np.random.Philox(counter=counter, key=[seed & _MASK64, _KEY_SALT])
    )


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    n_images: int = 16
    grid: tuple[int, int] = (8, 8)
    embed_dim: int = 16
    anomaly_rate: float = 0.25
    anomaly_patch_count: int = 4
    cluster_separation: float = math.pi / 3
    jitter: float = 0.08

    def validate(self) -> None:
        rows, cols = self.grid
        if self.n_images < 1 or rows < 1 or cols < 1 or self.embed_dim < 2:
            raise ValueError("n_images, grid and embed_dim must be positive (D >= 2)")
        if not 0.0 <= self.anomaly_rate < 1.0:
            raise ValueError("anomaly_rate must be in [0, 1)")
        if not 0 < self.anomaly_patch_count <= rows * cols:
            raise ValueError("anomaly_patch_count must be in [1, L]")
        if self.cluster_separation <= 0:
            raise ValueError("cluster_separation must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


def _foreground_box(rows: int, cols: int) -> tuple[int, int, int, int]:
    """Central block (r0, r1, c0, c1) that the synthetic attention highlights."""
    r0, c0 = rows // 4, cols // 4
    r1, c1 = max(r0 + 1, rows - rows // 4), max(c0 + 1, cols - cols // 4)
    return r0, r1, c0, c1


def gen_synthetic(
    spec: SyntheticSpec,
    name_prefix: str = "img_",
    image_index_offset: int = 0,
    dataset_tag: str = "synthetic",
) -> tuple[PatchEmbeddingBank, np.ndarray, np.ndarray]:
    """Build a bank, image labels and per-image binary patch masks.

    Normal patches cluster around one unit direction with Gaussian angular
    jitter; each anomalous image carries a contiguous block of
    ``anomaly_patch_count`` patches from a second cluster rotated by
    ``cluster_separation`` radians. Anomalous blocks are planted inside
    the attention foreground so masking cannot hide them.
    """
    spec.validate()
    rows, cols = spec.grid
    n, L, d = spec.n_images, rows * cols, spec.embed_dim

    v_normal = np.zeros(d)
    v_normal[0] = 1.0
    v_anom = np.zeros(d)
    v_anom[0] = math.cos(spec.cluster_separation)
    v_anom[1] = math.sin(spec.cluster_separation)

    n_anom = int(math.floor(spec.anomaly_rate * n + 0.5))
    label_rng = _stream(spec.seed, _STREAM_LABELS, image_index_offset)
    anomalous = set(label_rng.permutation(n)[:n_anom].tolist())

    r0, r1, c0, c1 = _foreground_box(rows, cols)
    block_w = min(math.ceil(math.sqrt(spec.anomaly_patch_count)), c1 - c0)
    block_h = math.ceil(spec.anomaly_patch_count / block_w)
    if block_h > r1 - r0:  # foreground too small; fall back to the full grid
        r0, r1, c0, c1 = 0, rows, 0, cols
        block_w = min(block_w, cols)
        block_h = min(math.ceil(spec.anomaly_patch_count / block_w), rows)

    image_labels = np.zeros(n, dtype=np.int64)
    pixel_labels = np.zeros((n, rows, cols), dtype=np.int64)
    embeddings = np.empty((n, L, d), dtype=np.float32)
    attention = np.empty((n, L), dtype=np.float32)

    fg = np.full((rows, cols), 0.1, dtype=np.float32)
    fg[r0:r1, c0:c1] = 0.9
    attn_row = fg.reshape(L)

    for i in range(n):
        idx = i + image_index_offset
        planted: set[int] = set()
        if i in anomalous:
            image_labels[i] = 1
            place = _stream(spec.seed, _STREAM_PLACEMENT, idx)
            br = r0 + int(place.integers(0, max(1, (r1 - r0) - block_h + 1)))
            bc = c0 + int(place.integers(0, max(1, (c1 - c0) - block_w + 1)))
            cells = [
                (br + rr, bc + cc)
                for rr in range(block_h)
                for cc in range(block_w)
            ][: spec.anomaly_patch_count]
            for rr, cc in cells:
                pixel_labels[i, rr, cc] = 1
                planted.add(rr * cols + cc)
        for p in range(L):
            rng = _stream(spec.seed, _STREAM_PATCHES, idx, p)
            z = rng.standard_normal(d)
            center = v_anom if p in planted else v_normal
            vec = center + spec.jitter * z
            embeddings[i, p] = (vec / np.linalg.norm(vec)).astype(np.float32)
        attention[i] = attn_row

    meta = StoreMetadata(
        backbone_id="synthetic",
        image_size=(cols * _PATCH_PIXELS, rows * _PATCH_PIXELS),
        patch_size=_PATCH_PIXELS,
        grid=(rows, cols),
        embed_dim=d,
        has_attention=True,
        image_names=tuple(f"{name_prefix}{i + image_index_offset:04d}" for i in range(n)),
        dataset_tag=dataset_tag,
        created_unix_ms=0,
    )
    bank = PatchEmbeddingBank(meta=meta, embeddings=embeddings, attention=attention)
    return bank, image_labels, pixel_labels


ORACLE_WORK_LIMIT = 1_000_000  # n_refs * L^2 per query


def _oracle_u(
    q_emb: np.ndarray,
    q_deg: np.ndarray,
    refs: list[tuple[np.ndarray, np.ndarray]],
    reduction: str,
) -> np.ndarray:
    L_q = q_emb.shape[0]
    u = np.empty((L_q, len(refs)), dtype=np.float64)
    for i, (r_emb, r_deg) in enumerate(refs):
        for j in range(L_q):
            best = None
            for kk in range(r_emb.shape[0]):
                if q_deg[j] or r_deg[kk]:
                    dval = 1.0
                else:
                    dval = 1.0 - float(np.dot(q_emb[j], r_emb[kk]))
                    dval = min(2.0, max(0.0, dval))
                if best is None:
                    best = dval
                elif reduction == "nearest":
                    best = min(best, dval)
                else:
                    best = max(best, dval)
            u[j, i] = best
    return u


def _oracle_aggregate(
    u: np.ndarray, cfg: ScoringConfig, grid, name: str
) -> tuple[PatchScoreMap, ImageScore]:
    L_q, n = u.shape
    kp = k_p(n, cfg)
    m = np.empty(L_q, dtype=np.float64)
    for j in range(L_q):
        if cfg.image_selection == "largest_u":
            chosen = sorted(range(n), key=lambda i: (-u[j, i], i))[:kp]
        else:
            chosen = sorted(range(n), key=lambda i: (u[j, i], i))[:kp]
        m[j] = sum(u[j, i] for i in chosen) / kp
    ki = k_i(L_q, cfg)
    top = sorted(range(L_q), key=lambda j: (-m[j], j))[:ki]
    s = sum(m[j] for j in top) / ki
    smap = PatchScoreMap(scores=m, grid=grid, query_name=name)
    return smap, ImageScore(
        value=float(s), contributing_patches=np.array(sorted(top)), query_name=name
    )


def oracle_score(
    query_bank: NormalizedBank | PatchEmbeddingBank,
    ref_bank: NormalizedBank | PatchEmbeddingBank | None,
    cfg: ScoringConfig,
) -> list[tuple[PatchScoreMap, ImageScore]]:
    """Reference scorer: explicit loops, no blocking or fusion.

    In the batch zero-shot setting ``ref_bank`` must be None and each image
    of ``query_bank`` is scored against the remaining ones. Guarded to
    small inputs (n_refs * L^2 <= 1e6 per query).
    """
    qb = query_bank if isinstance(query_bank, NormalizedBank) else normalize_bank(query_bank)
    emb = qb.embeddings.astype(np.float64)
    grid = qb.meta.grid
    names = qb.meta.image_names
    L = qb.meta.n_patches

    if cfg.setting == BATCH_ZERO_SHOT:
        if ref_bank is not None:
            raise ValueError("batch zero-shot scores a single bank; ref_bank must be None")
        b = qb.meta.n_images
        if b < 2:
            raise ValueError("batch zero-shot needs at least 2 images")
        if (b - 1) * L * L > ORACLE_WORK_LIMIT:
            raise ValueError("oracle size guard exceeded")
        out = []
        for q in range(b):
            refs = [(emb[i], qb.degenerate[i]) for i in range(b) if i != q]
            u = _oracle_u(emb[q], qb.degenerate[q], refs, cfg.per_image_reduction)
            out.append(_oracle_aggregate(u, cfg, grid, names[q]))
        return out

    if ref_bank is None:
        raise ValueError("few-shot oracle needs a prompt bank")
    rb = ref_bank if isinstance(ref_bank, NormalizedBank) else normalize_bank(ref_bank)
    r_emb = rb.embeddings.astype(np.float64)
    if rb.meta.n_images * L * L > ORACLE_WORK_LIMIT:
        raise ValueError("oracle size guard exceeded")
    refs = [(r_emb[i], rb.degenerate[i]) for i in range(rb.meta.n_images)]
    out = []
    for q in range(qb.meta.n_images):
        u = _oracle_u(emb[q], qb.degenerate[q], refs, cfg.per_image_reduction)
        out.append(_oracle_aggregate(u, cfg, grid, names[q]))
    return out

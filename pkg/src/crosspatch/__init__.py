"""Cross-patch cosine-similarity anomaly detection, training free.

Query images are scored against normal references (few-shot) or against
the rest of an unlabeled batch (batch zero-shot) by patch-embedding
similarity, with optional rigid alignment and attention-based foreground
masking, plus AUROC/AP/AUPRO evaluation and heatmap rendering.
"""

from .align import RigidTransform, build_prompt_variants, estimate_rigid, warp
from .attnmask import AttentionMask, apply_mask, attention_to_mask, head_average
from .bank import (
    NormalizedBank,
    PatchEmbeddingBank,
    StoreMetadata,
    normalize_bank,
    read_bank,
    write_bank,
)
from .metrics import EvalReport, aupro, auroc, average_precision
from .pixelmap import PixelAnomalyMap, render_heatmap, to_pixel_map
from .scoring import (
    ImageScore,
    PatchScoreMap,
    ScoringConfig,
    distance_matrix,
    image_score,
    k_p,
    patch_scores,
    per_image_match,
    score_batch_zero_shot,
    score_few_shot,
)
from .synthetic import SyntheticSpec, gen_synthetic, oracle_score

__version__ = "0.1.0"

__all__ = [
    "AttentionMask",
    "EvalReport",
    "ImageScore",
    "NormalizedBank",
    "PatchEmbeddingBank",
    "PatchScoreMap",
    "PixelAnomalyMap",
    "RigidTransform",
    "ScoringConfig",
    "StoreMetadata",
    "SyntheticSpec",
    "apply_mask",
    "attention_to_mask",
    "aupro",
    "auroc",
    "average_precision",
    "build_prompt_variants",
    "distance_matrix",
    "estimate_rigid",
    "gen_synthetic",
    "head_average",
    "image_score",
    "k_p",
    "normalize_bank",
    "oracle_score",
    "patch_scores",
    "per_image_match",
    "read_bank",
    "render_heatmap",
    "score_batch_zero_shot",
    "score_few_shot",
    "to_pixel_map",
    "warp",
    "write_bank",
]

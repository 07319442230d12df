"""Image-level AUROC/AP and pixel-level AUROC/AUPRO."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Equals P(score_pos > score_neg) + 0.5 * P(tie); requires both classes.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both positive and negative samples")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """AP over descending-score thresholds, tied scores grouped as one block."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # keep only the last row of each tied block
    block_end = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[block_end], fp[block_end]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _as_values(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def pro_curve(
    maps, gt_masks, thresholds: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, mean per-region overlap) at each threshold, descending order.

    Ground-truth regions are 8-connected components; the false-positive
    rate pools all normal pixels across the set. The returned curve is
    anchored at (0, 0) for the empty prediction.
    """
    values = [_as_values(m) for m in maps]
    masks = [np.asarray(g).astype(bool) for g in gt_masks]
    if len(values) != len(masks):
        raise ValueError("maps and gt_masks differ in length")
    regions = []  # (image index, boolean region mask, area)
    n_normal = 0
    for idx, (v, g) in enumerate(zip(values, masks)):
        if v.shape != g.shape:
            raise ValueError(f"map/mask shape mismatch at index {idx}")
        n_normal += int((~g).sum())
        labeled, n_regions = ndimage.label(g, structure=EIGHT_CONNECTED)
        for r in range(1, n_regions + 1):
            region = labeled == r
            regions.append((idx, region, int(region.sum())))
    if not regions:
        raise ValueError("no anomalous region in the ground truth")
    if n_normal == 0:
        raise ValueError("no normal pixels to measure a false-positive rate on")

    fprs = [0.0]
    pros = [0.0]
    for t in thresholds:
        preds = [v >= t for v in values]
        fp = sum(int((p & ~g).sum()) for p, g in zip(preds, masks))
        overlap = [preds[idx][region].sum() / area for idx, region, area in regions]
        fprs.append(fp / n_normal)
        pros.append(float(np.mean(overlap)))
    fpr = np.asarray(fprs)
    pro = np.asarray(pros)
    order = np.argsort(fpr, kind="stable")
    return fpr[order], pro[order]


def integrate_to_limit(fpr: np.ndarray, pro: np.ndarray, fpr_limit: float) -> float:
    """Trapezoid of the PRO curve over [0, fpr_limit], normalized by the limit."""
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError("fpr_limit must be in (0, 1]")
    keep = fpr <= fpr_limit
    xs = fpr[keep]
    ys = pro[keep]
    if xs.size == 0 or xs[-1] < fpr_limit:
        # linear interpolation at the limit from the bracketing points
        j = int(np.searchsorted(fpr, fpr_limit, side="right"))
        if j >= fpr.size:
            y_at = ys[-1] if ys.size else 0.0
        else:
            f1 = fpr[j - 1] if j > 0 else 0.0
            p1 = pro[j - 1] if j > 0 else 0.0
            f2, p2 = fpr[j], pro[j]
            y_at = p1 if f2 == f1 else p1 + (p2 - p1) * (fpr_limit - f1) / (f2 - f1)
        xs = np.r_[xs, fpr_limit]
        ys = np.r_[ys, y_at]
    return float(np.trapezoid(ys, xs) / fpr_limit)


def aupro(
    maps,
    gt_masks,
    fpr_limit: float = 0.3,
    n_thresholds: int = 200,
) -> float:
    """Area under the per-region-overlap curve up to ``fpr_limit``.

    Thresholds are ``n_thresholds`` quantile levels of all map values,
    swept descending; pass the full set of distinct values for an exact
    curve (quantile spacing is accurate to ~1e-3 against that).
    """
    values = np.concatenate([_as_values(m).ravel() for m in maps])
    qs = np.quantile(values, np.linspace(0.0, 1.0, n_thresholds))
    thresholds = np.unique(qs)[::-1]
    fpr, pro = pro_curve(maps, gt_masks, thresholds)
    return integrate_to_limit(fpr, pro, fpr_limit)


@dataclass
class CategoryMetrics:
    category: str
    image_auroc: float
    image_ap: float
    pixel_auroc: float
    aupro: float
    n_images: int
    n_anomalous: int


@dataclass
class EvalReport:
    per_category: list[CategoryMetrics]
    macro_average: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "per_category": [asdict(c) for c in self.per_category],
            "macro_average": dict(self.macro_average),
        }


def build_report(per_category: list[CategoryMetrics]) -> EvalReport:
    """Assemble the report; macro average is the unweighted category mean."""
    if not per_category:
        raise ValueError("no categories to report")
    macro = {
        key: float(np.mean([getattr(c, key) for c in per_category]))
        for key in ("image_auroc", "image_ap", "pixel_auroc", "aupro")
    }
    return EvalReport(per_category=list(per_category), macro_average=macro)

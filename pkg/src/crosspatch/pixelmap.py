"""Patch-score grids to full-resolution pixel maps and heatmap PNGs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .scoring import PatchScoreMap


@dataclass
class PixelAnomalyMap:
    values: np.ndarray  # (height, width) float64
    source_query: str = ""


def _axis_weights(n_out: int, n_in: int, cell: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear sample positions along one axis, cell centers as anchors.

    Output pixel centers are mapped into cell-index space and clamped at
    the edges (the outermost half-cell repeats the border value).
    """
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) / cell - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.floor(pos).astype(int)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def _bilinear_resize(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    rows, cols = grid.shape
    r0, r1, fr = _axis_weights(height, rows, height / rows)
    c0, c1, fc = _axis_weights(width, cols, width / cols)
    top = grid[np.ix_(r0, c0)] * (1 - fc) + grid[np.ix_(r0, c1)] * fc
    bot = grid[np.ix_(r1, c0)] * (1 - fc) + grid[np.ix_(r1, c1)] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def to_pixel_map(
    score_map: PatchScoreMap,
    image_size: tuple[int, int],
    sigma: float = 4.0,
) -> PixelAnomalyMap:
    """Upsample a patch-score grid to pixel resolution.

    Scores are laid out on the (rows, cols) grid in row-major patch order,
    bilinearly interpolated between patch centers with edge clamping, then
    Gaussian-smoothed (sigma in pixels; 0 disables smoothing). The grid
    must tile the target size exactly.
    """
    width, height = image_size
    rows, cols = score_map.grid
    if height % rows or width % cols:
        raise ValueError(
            f"grid {score_map.grid} does not tile image size {image_size}"
        )
    grid = np.asarray(score_map.scores, dtype=np.float64).reshape(rows, cols)
    values = _bilinear_resize(grid, height, width)
    if sigma > 0:
        values = gaussian_filter(values, sigma=sigma, mode="nearest")
    return PixelAnomalyMap(values=values, source_query=score_map.query_name)


def resize_map(pmap: PixelAnomalyMap, height: int, width: int) -> PixelAnomalyMap:
    """Bilinear resize of a pixel map (e.g. to a ground-truth mask's shape)."""
    if pmap.values.shape == (height, width):
        return pmap
    return PixelAnomalyMap(
        values=_bilinear_resize(pmap.values, height, width),
        source_query=pmap.source_query,
    )


def quantize(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """8-bit quantization: round-half-up of 255 * clamped unit-range values."""
    if vmax <= vmin:
        return np.zeros(values.shape, dtype=np.uint8)
    unit = np.clip((values - vmin) / (vmax - vmin), 0.0, 1.0)
    return np.floor(unit * 255.0 + 0.5).astype(np.uint8)


def render_heatmap(
    pmap: PixelAnomalyMap,
    path: str | Path,
    normalization: tuple[float, float] | str = "per_image",
) -> None:
    """Write the map as an 8-bit grayscale PNG.

    ``normalization`` is either a fixed (min, max) range or "per_image"
    to use the map's own extrema. Constant maps render all-zero.
    """
    if normalization == "per_image":
        vmin, vmax = float(pmap.values.min()), float(pmap.values.max())
    else:
        vmin, vmax = normalization
    img = Image.fromarray(quantize(pmap.values, vmin, vmax), mode="L")
    img.save(Path(path), format="PNG")

"""Rigid (rotation + translation) registration between grayscale images.

Rotation is grid-searched; translation, for each candidate angle, comes
from the peak of the phase-correlation surface. Images larger than 256 px
on the long side are registered at reduced scale and the shift rescaled.
Grayscale images are plain 2-D float arrays with values in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .scoring import ImageScore

DEFAULT_ANGLE_GRID = tuple(range(-20, 21))
MAX_REGISTRATION_SIDE = 256


@dataclass(frozen=True)
class RigidTransform:
    """Correcting transform: rotate by angle_deg about the center, then
    translate by (dx, dy) pixels. Applying it to the query aligns it with
    the reference it was estimated against."""

    angle_deg: float
    dx: float
    dy: float
    confidence: float = 1.0

    def __post_init__(self):
        if not -180.0 <= self.angle_deg <= 180.0:
            raise ValueError("angle_deg must lie in [-180, 180]")


IDENTITY = RigidTransform(0.0, 0.0, 0.0, 1.0)


def load_gray(path: str | Path) -> np.ndarray:
    """Read any common 8-bit image as luminance in [0, 1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


_CARDINAL_TRIG = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}


def _cos_sin(angle_deg: float) -> tuple[float, float]:
    """cos/sin with exact values at multiples of 90 degrees, so cardinal
    rotations sample exactly on the pixel grid instead of epsilon outside."""
    key = angle_deg % 360.0
    if key in _CARDINAL_TRIG:
        return _CARDINAL_TRIG[key]
    a = math.radians(angle_deg)
    return math.cos(a), math.sin(a)


def warp(image: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Rotate about the image center, then translate; bilinear sampling.

    Out-of-bounds samples are filled with the image mean so warped borders
    do not read as anomalous structure.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_a, sin_a = _cos_sin(t.angle_deg)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    qx = xx - cx - t.dx
    qy = yy - cy - t.dy
    sx = qx * cos_a + qy * sin_a + cx
    sy = -qx * sin_a + qy * cos_a + cy
    return ndimage.map_coordinates(
        img, [sy, sx], order=1, mode="constant", cval=float(img.mean())
    )


def rot180(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image)[::-1, ::-1])


def _hann2d(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


def _parabolic_offset(lo: float, mid: float, hi: float) -> float:
    """Sub-sample offset of a peak from its two neighbours (3-point fit)."""
    den = lo - 2.0 * mid + hi
    return 0.0 if den == 0.0 else 0.5 * (lo - hi) / den


def _phase_correlate(f: np.ndarray, g: np.ndarray) -> tuple[float, float, float]:
    """Peak of the normalized cross-power spectrum and the signed shift
    (dy, dx) that moves ``g`` onto ``f``, refined to sub-pixel."""
    h, w = f.shape
    win = _hann2d(h, w)
    spec_f = np.fft.fft2((f - f.mean()) * win)
    spec_g = np.fft.fft2((g - g.mean()) * win)
    cross = spec_f * np.conj(spec_g)
    cross /= np.maximum(np.abs(cross), 1e-12)
    surface = np.fft.ifft2(cross).real
    iy, ix = np.unravel_index(int(np.argmax(surface)), surface.shape)
    peak = float(surface[iy, ix])
    dy = iy + _parabolic_offset(
        surface[(iy - 1) % h, ix], surface[iy, ix], surface[(iy + 1) % h, ix]
    )
    dx = ix + _parabolic_offset(
        surface[iy, (ix - 1) % w], surface[iy, ix], surface[iy, (ix + 1) % w]
    )
    if dy > h / 2:
        dy -= h
    if dx > w / 2:
        dx -= w
    return peak, float(dy), float(dx)


def estimate_rigid(
    reference: np.ndarray,
    query: np.ndarray,
    angle_grid=DEFAULT_ANGLE_GRID,
) -> RigidTransform:
    """Search the angle grid for the correcting rotation + translation.

    Ties on the correlation peak prefer the smaller |angle|, then the
    smaller angle, so the result is independent of grid order.
    """
    ref = np.asarray(reference, dtype=np.float64)
    qry = np.asarray(query, dtype=np.float64)
    if ref.shape != qry.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {qry.shape}")
    angles = list(angle_grid)
    if not angles:
        raise ValueError("angle_grid is empty")

    scale = 1.0
    longest = max(ref.shape)
    if longest > MAX_REGISTRATION_SIDE:
        scale = MAX_REGISTRATION_SIDE / longest
        ref = ndimage.zoom(ref, scale, order=1)
        qry = ndimage.zoom(qry, scale, order=1)

    best = None
    for a in angles:
        rotated = warp(qry, RigidTransform(float(a), 0.0, 0.0))
        peak, dy, dx = _phase_correlate(ref, rotated)
        key = (-peak, abs(a), a)
        if best is None or key < best[0]:
            best = (key, float(a), dx, dy, peak)
    _, angle, dx, dy, peak = best
    return RigidTransform(
        angle_deg=angle,
        dx=dx / scale,
        dy=dy / scale,
        confidence=min(1.0, max(0.0, peak)),
    )


def build_prompt_variants(prompt: np.ndarray, query: np.ndarray) -> list[np.ndarray]:
    """[original, aligned-to-query, aligned rotated 180 degrees]."""
    prompt = np.asarray(prompt, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if prompt.shape != query.shape:
        raise ValueError("prompt and query dimensions differ")
    corrected = warp(prompt, estimate_rigid(query, prompt))
    return [prompt, corrected, rot180(corrected)]


def average_variant_scores(scores) -> float:
    """Mean of the three per-variant image scores for one sample."""
    vals = [s.value if isinstance(s, ImageScore) else float(s) for s in scores]
    if len(vals) != 3:
        raise ValueError(f"expected exactly 3 variant scores, got {len(vals)}")
    return (vals[0] + vals[1] + vals[2]) / 3.0


# Grid-level fallback: when only patch embeddings are available (no pixels
# to re-encode), alignment is approximated by rolling the patch grid by
# whole-patch offsets; the 180-degree variant reverses both grid axes.


def patch_offset(t: RigidTransform, patch_size: float) -> tuple[int, int]:
    """Whole-patch (d_rows, d_cols) closest to the transform's translation."""
    return int(round(t.dy / patch_size)), int(round(t.dx / patch_size))


def roll_patch_grid(
    values: np.ndarray, grid: tuple[int, int], d_rows: int, d_cols: int
) -> np.ndarray:
    """Roll per-patch values (L, ...) on their (rows, cols) grid, wrapping."""
    rows, cols = grid
    arr = np.asarray(values)
    shaped = arr.reshape(rows, cols, *arr.shape[1:])
    rolled = np.roll(np.roll(shaped, d_rows, axis=0), d_cols, axis=1)
    return rolled.reshape(arr.shape)


def flip180_patch_grid(values: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    rows, cols = grid
    arr = np.asarray(values)
    shaped = arr.reshape(rows, cols, *arr.shape[1:])
    return np.ascontiguousarray(shaped[::-1, ::-1]).reshape(arr.shape)

"""Dataset walking, preprocessing and bank extraction."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .backbones import Backbone, get_config
from .peadwriter import metadata_json, write_pead

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
BATCH = 8


class LayoutViolation(Exception):
    pass


@dataclass(frozen=True)
class RigidTransform:
    angle_deg: float
    dx: float
    dy: float


@dataclass(frozen=True)
class ExtractSpec:
    model_id: str
    dataset_root: str
    out_path: str
    image_size: int = 448
    split: str = "train_good"  # or "test_all"

    def validate(self) -> None:
        if self.split not in ("train_good", "test_all"):
            raise ValueError(f"unknown split {self.split!r}")
        config = get_config(self.model_id)
        if self.image_size % config.patch_size:
            raise ValueError(
                f"image size {self.image_size} not divisible by "
                f"patch size {config.patch_size} of {self.model_id}"
            )


def list_split_images(dataset_root: str | Path, split: str) -> list[str]:
    """Relative paths of the split's images, in sorted path order."""
    root = Path(dataset_root)
    base = root / ("train/good" if split == "train_good" else "test")
    if not base.is_dir():
        raise LayoutViolation(f"{base} does not exist")
    names = sorted(
        p.relative_to(root).as_posix()
        for p in base.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not names:
        raise LayoutViolation(f"no images under {base}")
    return names


def load_image(path: str | Path, size: int) -> np.ndarray:
    """RGB float array in [0, 1], square bicubic resize without cropping."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.BICUBIC)
    return np.asarray(rgb, dtype=np.float32) / 255.0


_CARDINAL_TRIG = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}


def warp_image(image: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Rotate about the center then translate, per channel, mean fill.

    Multiples of 90 degrees use exact trig so the sampling lands exactly on
    the pixel grid.
    """
    h, w, _ = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_a, sin_a = _CARDINAL_TRIG.get(
        t.angle_deg % 360.0, (np.cos(np.radians(t.angle_deg)), np.sin(np.radians(t.angle_deg)))
    )
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    qx = xx - cx - t.dx
    qy = yy - cy - t.dy
    sx = qx * cos_a + qy * sin_a + cx
    sy = -qx * sin_a + qy * cos_a + cy
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(
            image[:, :, c], [sy, sx], order=1, mode="constant",
            cval=float(image[:, :, c].mean()),
        )
    return out


def _encode_all(
    backbone: Backbone,
    root: Path,
    names: list[str],
    size: int,
    transforms: list[RigidTransform] | None,
) -> tuple[np.ndarray, np.ndarray]:
    all_tokens, all_attn = [], []
    for start in range(0, len(names), BATCH):
        chunk = names[start : start + BATCH]
        images = np.stack([load_image(root / n, size) for n in chunk])
        if transforms is not None:
            images = np.stack(
                [
                    warp_image(img, transforms[start + i])
                    for i, img in enumerate(images)
                ]
            )
        tokens, attn = backbone.encode(images)
        all_tokens.append(tokens)
        all_attn.append(attn)
    return np.concatenate(all_tokens), np.concatenate(all_attn)


def _write(spec: ExtractSpec, names, tokens, attn, extra=None) -> None:
    config = get_config(spec.model_id)
    grid = config.grid_for(spec.image_size)
    meta = metadata_json(
        backbone_id=spec.model_id,
        image_size=(spec.image_size, spec.image_size),
        patch_size=config.patch_size,
        grid=grid,
        embed_dim=config.embed_dim,
        has_attention=True,
        image_names=names,
        dataset_tag=Path(spec.dataset_root).name,
        created_unix_ms=int(time.time() * 1000),
        extra=extra,
    )
    write_pead(spec.out_path, meta, tokens, attn)


def extract(spec: ExtractSpec) -> list[str]:
    """Encode a dataset split into a bank file; returns the image names."""
    spec.validate()
    backbone = get_config(spec.model_id).load()
    names = list_split_images(spec.dataset_root, spec.split)
    tokens, attn = _encode_all(backbone, Path(spec.dataset_root), names, spec.image_size, None)
    _write(spec, names, tokens, attn)
    return names


def extract_warped(spec: ExtractSpec, transforms: list[RigidTransform]) -> list[str]:
    """Like extract, but each image is rigidly warped before encoding.

    The applied transforms are recorded in the bank metadata (readers
    ignore the extra key).
    """
    spec.validate()
    backbone = get_config(spec.model_id).load()
    names = list_split_images(spec.dataset_root, spec.split)
    if len(transforms) != len(names):
        raise ValueError(f"{len(transforms)} transforms for {len(names)} images")
    tokens, attn = _encode_all(
        backbone, Path(spec.dataset_root), names, spec.image_size, transforms
    )
    record = [
        {"angle_deg": t.angle_deg, "dx": t.dx, "dy": t.dy} for t in transforms
    ]
    _write(spec, names, tokens, attn, extra={"transforms": record})
    return names

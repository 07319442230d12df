"""MVTec-style dataset layout: category/test/<defect>/*.png with parallel
ground-truth masks under category/ground_truth; the "good" folder carries
label 0 and has no masks."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DatasetError(Exception):
    pass


def discover_categories(root: str | Path) -> list[str]:
    """Category names = directories under the root that contain a test split."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    cats = sorted(p.name for p in root.iterdir() if (p / "test").is_dir())
    if not cats:
        raise DatasetError(f"no categories with a test/ split under {root}")
    return cats


def _is_image(p: Path) -> bool:
    return p.suffix.lower() in IMAGE_EXTENSIONS


def list_test_images(category_dir: str | Path) -> list[tuple[str, int, Path | None]]:
    """(relative name, label, mask path or None) for every test image, sorted.

    Anomalous images must have a mask named <stem>_mask.<ext> or
    <stem>.<ext> under ground_truth/<defect>/.
    """
    category_dir = Path(category_dir)
    test_dir = category_dir / "test"
    if not test_dir.is_dir():
        raise DatasetError(f"{category_dir} has no test/ split")
    entries = []
    for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        label = 0 if defect_dir.name == "good" else 1
        for img in sorted(p for p in defect_dir.iterdir() if _is_image(p)):
            rel = img.relative_to(category_dir).as_posix()
            mask_path = None
            if label == 1:
                mask_path = _find_mask(category_dir, defect_dir.name, img)
                if mask_path is None:
                    raise DatasetError(f"missing ground-truth mask for {rel}")
            entries.append((rel, label, mask_path))
    if not entries:
        raise DatasetError(f"no test images under {test_dir}")
    return entries


def _find_mask(category_dir: Path, defect: str, img: Path) -> Path | None:
    gt_dir = category_dir / "ground_truth" / defect
    for candidate in (f"{img.stem}_mask", img.stem):
        for ext in IMAGE_EXTENSIONS:
            p = gt_dir / f"{candidate}{ext}"
            if p.is_file():
                return p
    return None


def list_train_images(category_dir: str | Path) -> list[str]:
    """Relative names of the train/good images, sorted."""
    good = Path(category_dir) / "train" / "good"
    if not good.is_dir():
        return []
    return sorted(
        p.relative_to(category_dir).as_posix() for p in good.iterdir() if _is_image(p)
    )


def load_binary_mask(path: str | Path) -> np.ndarray:
    """Ground-truth mask as a boolean array; any nonzero pixel is anomalous."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0

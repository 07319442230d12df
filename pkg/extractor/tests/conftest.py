import numpy as np
import pytest
from PIL import Image


def write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8), mode="RGB").save(path)


@pytest.fixture
def mini_dataset(tmp_path):
    """MVTec-style category dir with 3 train and 4 test images, 32x32 RGB."""
    root = tmp_path / "gadget"
    rng = np.random.default_rng(0)
    for i in range(3):
        write_png(root / "train" / "good" / f"{i:03d}.png", rng.integers(0, 255, (32, 32, 3)))
    for i in range(2):
        write_png(root / "test" / "good" / f"{i:03d}.png", rng.integers(0, 255, (32, 32, 3)))
        write_png(root / "test" / "dent" / f"{i:03d}.png", rng.integers(0, 255, (32, 32, 3)))
    return root


@pytest.fixture
def calibration_dataset(tmp_path):
    """One image whose every 4x4 patch is a distinct solid color."""
    root = tmp_path / "calib"
    grid = 8
    img = np.zeros((32, 32, 3))
    for r in range(grid):
        for c in range(grid):
            color = (30 * r + 7, 30 * c + 7, 15 * (r + c) + 9)
            img[4 * r : 4 * r + 4, 4 * c : 4 * c + 4] = color
    write_png(root / "train" / "good" / "cal.png", img)
    return root

import numpy as np
import pytest

from crosspatch.bank import PatchEmbeddingBank, StoreMetadata, normalize_bank


def make_meta(n, grid, d, has_attention=False, patch_size=16, tag="test"):
    rows, cols = grid
    return StoreMetadata(
        backbone_id="unit-test",
        image_size=(cols * patch_size, rows * patch_size),
        patch_size=patch_size,
        grid=grid,
        embed_dim=d,
        has_attention=has_attention,
        image_names=tuple(f"img_{i:03d}" for i in range(n)),
        dataset_tag=tag,
    )


def make_bank(seed, n, grid, d, has_attention=False):
    rows, cols = grid
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, rows * cols, d)).astype(np.float32)
    attn = None
    if has_attention:
        attn = rng.random((n, rows * cols)).astype(np.float32)
    return PatchEmbeddingBank(
        meta=make_meta(n, grid, d, has_attention), embeddings=emb, attention=attn
    )


def unit_rows(seed, n_rows, d):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_rows, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def normalized_from_array(emb, patch_size=16, grid=None, names=None):
    """Wrap an (N, L, D) array of raw embeddings as a NormalizedBank."""
    n, L, d = emb.shape
    if grid is None:
        grid = (L, 1)
    meta = make_meta(n, grid, d, patch_size=patch_size)
    if names is not None:
        from dataclasses import replace

        meta = replace(meta, image_names=tuple(names))
    bank = PatchEmbeddingBank(meta=meta, embeddings=np.asarray(emb, np.float32))
    return normalize_bank(bank)


@pytest.fixture
def textured_image():
    """Multi-scale random texture, the kind registration is expected to handle."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(7)
    img = gaussian_filter(rng.random((128, 128)), 4) + 0.5 * gaussian_filter(
        rng.random((128, 128)), 1.2
    )
    return (img - img.min()) / (img.max() - img.min())

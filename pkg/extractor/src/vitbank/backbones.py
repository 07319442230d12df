"""Vision-transformer backbones and the token/attention plumbing.

Every backbone returns final-layer patch tokens (CLS and register tokens
stripped) plus the CLS token's attention row over patch tokens, averaged
over heads and left un-renormalized. Pretrained models load lazily; the
``toy-vit`` entry is a deterministic seeded mini-ViT for offline use.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ModelUnavailable(Exception):
    """Weights or a required package cannot be obtained."""


def split_tokens(hidden: np.ndarray, n_prefix: int) -> np.ndarray:
    """Drop the CLS/register prefix from a (N, T, D) token tensor."""
    if hidden.ndim != 3 or hidden.shape[1] <= n_prefix:
        raise ValueError(f"token tensor {hidden.shape} too small for prefix {n_prefix}")
    return hidden[:, n_prefix:, :]


def cls_attention_rows(attn: np.ndarray, n_prefix: int) -> np.ndarray:
    """Head-averaged CLS->patch attention from a (N, H, T, T) tensor.

    Row 0 is the CLS query; columns from ``n_prefix`` on are patch tokens.
    The patch-restricted row is averaged over heads without renormalizing.
    """
    if attn.ndim != 4:
        raise ValueError("expected (N, heads, tokens, tokens) attention")
    rows = attn[:, :, 0, n_prefix:]
    return rows.mean(axis=1)


@dataclass(frozen=True)
class BackboneConfig:
    model_id: str
    patch_size: int
    embed_dim: int
    n_prefix_tokens: int  # CLS + register tokens ahead of the patch tokens
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    loader: Callable[["BackboneConfig"], "Backbone"]

    def grid_for(self, image_size: int) -> tuple[int, int]:
        if image_size % self.patch_size:
            raise ValueError(
                f"image size {image_size} not divisible by patch {self.patch_size}"
            )
        side = image_size // self.patch_size
        return side, side

    def load(self) -> "Backbone":
        return self.loader(self)


class Backbone:
    """Loaded model: encode (N, H, W, 3) float images in [0, 1]."""

    def __init__(self, config: BackboneConfig):
        self.config = config

    def encode(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (patch tokens (N, L, D), attention rows (N, L))."""
        raise NotImplementedError


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class HFTransformerBackbone(Backbone):
    """DINO/MAE-family models through the transformers AutoModel API."""

    def __init__(self, config: BackboneConfig, checkpoint: str):
        super().__init__(config)
        try:
            import torch
            from transformers import AutoModel
        except ImportError as exc:
            raise ModelUnavailable(f"torch/transformers not installed: {exc}") from exc
        try:
            self._model = AutoModel.from_pretrained(checkpoint, attn_implementation="eager")
        except Exception as exc:
            raise ModelUnavailable(f"cannot load {checkpoint}: {exc}") from exc
        self._model.eval()
        self._torch = torch

    def encode(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        torch = self._torch
        mean = np.asarray(self.config.mean, dtype=np.float32)
        std = np.asarray(self.config.std, dtype=np.float32)
        x = (images.astype(np.float32) - mean) / std
        batch = torch.from_numpy(np.transpose(x, (0, 3, 1, 2)))
        with torch.no_grad():
            out = self._model(pixel_values=batch, output_attentions=True)
        hidden = out.last_hidden_state.numpy()
        attn = out.attentions[-1].numpy()
        n_prefix = self.config.n_prefix_tokens
        return split_tokens(hidden, n_prefix), cls_attention_rows(attn, n_prefix)


class ToyViT(Backbone):
    """Seeded per-patch projection with a softmax CLS attention.

    Patch-local by construction (no cross-patch mixing), which makes grid
    permutation properties exactly testable. Two fake register tokens and
    multiple heads exercise the same plumbing as the real models.
    """

    N_HEADS = 4

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        rng = np.random.default_rng(0x70F)
        p = config.patch_size
        self._proj = rng.standard_normal((p * p * 3, config.embed_dim)) / np.sqrt(p * p * 3)
        self._head_u = rng.standard_normal((self.N_HEADS, config.embed_dim, 8)) / np.sqrt(
            config.embed_dim
        )
        self._head_v = rng.standard_normal((self.N_HEADS, 8))
        self._prefix_logits = rng.standard_normal((self.N_HEADS, config.n_prefix_tokens))

    def _patches(self, images: np.ndarray) -> np.ndarray:
        n, h, w, _ = images.shape
        p = self.config.patch_size
        rows, cols = h // p, w // p
        tiles = images.reshape(n, rows, p, cols, p, 3).transpose(0, 1, 3, 2, 4, 5)
        return tiles.reshape(n, rows * cols, p * p * 3)

    def encode(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        flat = self._patches(images.astype(np.float64))
        tokens = flat @ self._proj  # (N, L, D)
        n, L, _ = tokens.shape
        head_rows = np.empty((n, self.N_HEADS, L))
        for h in range(self.N_HEADS):
            scores = np.tanh(tokens @ self._head_u[h]) @ self._head_v[h]  # (N, L)
            logits = np.concatenate(
                [np.tile(self._prefix_logits[h], (n, 1)), scores], axis=1
            )
            full = np.exp(logits - logits.max(axis=1, keepdims=True))
            full /= full.sum(axis=1, keepdims=True)  # softmax over all tokens
            head_rows[:, h, :] = full[:, self.config.n_prefix_tokens :]
        return tokens.astype(np.float32), head_rows.mean(axis=1).astype(np.float32)

    def head_attention(self, images: np.ndarray) -> np.ndarray:
        """Per-head full-token rows (N, H, T), for post-softmax checks."""
        flat = self._patches(images.astype(np.float64))
        tokens = flat @ self._proj
        n, L, _ = tokens.shape
        rows = np.empty((n, self.N_HEADS, self.config.n_prefix_tokens + L))
        for h in range(self.N_HEADS):
            scores = np.tanh(tokens @ self._head_u[h]) @ self._head_v[h]
            logits = np.concatenate(
                [np.tile(self._prefix_logits[h], (n, 1)), scores], axis=1
            )
            full = np.exp(logits - logits.max(axis=1, keepdims=True))
            rows[:, h, :] = full / full.sum(axis=1, keepdims=True)
        return rows


def _load_hf(checkpoint: str):
    def loader(config: BackboneConfig) -> Backbone:
        return HFTransformerBackbone(config, checkpoint)

    return loader


def _load_openclip(model_name: str, pretrained: str):
    def loader(config: BackboneConfig) -> Backbone:
        raise ModelUnavailable(
            f"{config.model_id} needs the open_clip_torch package and the "
            f"{model_name}/{pretrained} weights"
        )

    return loader


REGISTRY: dict[str, BackboneConfig] = {
    "dinov2-vitb14-reg": BackboneConfig(
        model_id="dinov2-vitb14-reg",
        patch_size=14,
        embed_dim=768,
        n_prefix_tokens=5,  # CLS + 4 registers
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        loader=_load_hf("facebook/dinov2-with-registers-base"),
    ),
    "clip-vitb16plus": BackboneConfig(
        model_id="clip-vitb16plus",
        patch_size=16,
        embed_dim=896,
        n_prefix_tokens=1,
        mean=CLIP_MEAN,
        std=CLIP_STD,
        loader=_load_openclip("ViT-B-16-plus-240", "laion400m_e32"),
    ),
    "mae-vitb16": BackboneConfig(
        model_id="mae-vitb16",
        patch_size=16,
        embed_dim=768,
        n_prefix_tokens=1,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        loader=_load_hf("facebook/vit-mae-base"),
    ),
    "dinov3-vitb16": BackboneConfig(
        model_id="dinov3-vitb16",
        patch_size=16,
        embed_dim=768,
        n_prefix_tokens=5,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        loader=_load_hf("facebook/dinov3-vitb16-pretrain-lvd1689m"),
    ),
    "toy-vit": BackboneConfig(
        model_id="toy-vit",
        patch_size=4,
        embed_dim=32,
        n_prefix_tokens=3,  # CLS + 2 fake registers
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        loader=ToyViT,
    ),
}


def get_config(model_id: str) -> BackboneConfig:
    try:
        return REGISTRY[model_id]
    except KeyError:
        raise ModelUnavailable(
            f"unknown model id {model_id!r}; known: {sorted(REGISTRY)}"
        ) from None

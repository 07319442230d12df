"""Patch-embedding bank extraction from pretrained vision transformers."""

from .backbones import ModelUnavailable, REGISTRY, get_config
from .extract import ExtractSpec, RigidTransform, extract, extract_warped

__version__ = "0.1.0"

__all__ = [
    "ExtractSpec",
    "ModelUnavailable",
    "REGISTRY",
    "RigidTransform",
    "extract",
    "extract_warped",
    "get_config",
]

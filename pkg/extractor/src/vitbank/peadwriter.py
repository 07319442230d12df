"""Writer for PEAD v1 bank files.

Layout: magic "PEAD" | u32 version=1 LE | u32 metadata_len LE | metadata
JSON (UTF-8) | embeddings f32 LE [image][patch][dim] | attention f32 LE
[image][patch] (present iff has_attention). No padding, no trailer.

Implemented against the format contract, independently of any reader.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PEAD"
VERSION = 1


def metadata_json(
    backbone_id: str,
    image_size: tuple[int, int],
    patch_size: int,
    grid: tuple[int, int],
    embed_dim: int,
    has_attention: bool,
    image_names: list[str],
    dataset_tag: str,
    created_unix_ms: int,
    extra: dict | None = None,
) -> bytes:
    doc = {
        "backbone_id": backbone_id,
        "image_size": list(image_size),
        "patch_size": patch_size,
        "grid": list(grid),
        "embed_dim": embed_dim,
        "has_attention": has_attention,
        "image_names": list(image_names),
        "dataset_tag": dataset_tag,
        "created_unix_ms": created_unix_ms,
    }
    if extra:
        doc.update(extra)  # readers ignore unknown keys
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_pead(
    path: str | Path,
    meta_json: bytes,
    embeddings: np.ndarray,
    attention: np.ndarray | None,
) -> None:
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    if emb.ndim != 3:
        raise ValueError("embeddings must be (N, L, D)")
    if not np.all(np.isfinite(emb)):
        raise ValueError("embeddings contain non-finite values")
    if attention is not None:
        attn = np.ascontiguousarray(attention, dtype="<f4")
        if attn.shape != emb.shape[:2]:
            raise ValueError(f"attention shape {attn.shape} != {emb.shape[:2]}")
        if not np.all(np.isfinite(attn)):
            raise ValueError("attention contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MAGIC, VERSION, len(meta_json)))
        fh.write(meta_json)
        fh.write(emb.tobytes())
        if attention is not None:
            fh.write(attn.tobytes())

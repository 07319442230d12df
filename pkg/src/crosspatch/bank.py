"""Binary container for patch embeddings and attention rows.

A bank file holds N images x L patches x D float32 embeddings plus optional
per-patch attention, with a small JSON metadata header. Layout (version 1,
all integers little-endian):

    magic "PEAD" | u32 version=1 | u32 metadata_len | metadata JSON (UTF-8)
    | embeddings f32 [image][patch][dim] | attention f32 [image][patch]

No padding, no trailer. The attention block is present iff
``has_attention`` is true in the metadata.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MAGIC = b"PEAD"
VERSION = 1
_HEADER = struct.Struct("<4sII")


class BankError(Exception):
    """Base class for bank container problems."""


class BadMagic(BankError):
    pass


class UnsupportedVersion(BankError):
    pass


class TruncatedFile(BankError):
    pass


class MetadataMismatch(BankError):
    """Declared metadata does not match the file contents or itself."""


class NonFiniteValues(BankError):
    pass


class InvariantViolation(BankError):
    """Bank violates a type invariant; refused on write."""


_META_KEYS = (
    "backbone_id",
    "image_size",
    "patch_size",
    "grid",
    "embed_dim",
    "has_attention",
    "image_names",
    "dataset_tag",
    "created_unix_ms",
)


@dataclass(frozen=True)
class StoreMetadata:
    """Geometry and provenance of a bank.

    ``image_size`` is (width, height) in pixels; ``grid`` is (rows, cols)
    of the patch grid, so rows * patch_size == height and
    cols * patch_size == width exactly.
    """

    backbone_id: str
    image_size: tuple[int, int]
    patch_size: int
    grid: tuple[int, int]
    embed_dim: int
    has_attention: bool
    image_names: tuple[str, ...]
    dataset_tag: str = ""
    created_unix_ms: int = 0

    @property
    def n_images(self) -> int:
        return len(self.image_names)

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    def validate(self) -> None:
        width, height = self.image_size
        rows, cols = self.grid
        if self.patch_size <= 0 or rows <= 0 or cols <= 0 or self.embed_dim <= 0:
            raise InvariantViolation("patch_size, grid and embed_dim must be positive")
        if rows * self.patch_size != height:
            raise InvariantViolation(
                f"grid rows {rows} x patch {self.patch_size} != height {height}"
            )
        if cols * self.patch_size != width:
            raise InvariantViolation(
                f"grid cols {cols} x patch {self.patch_size} != width {width}"
            )
        if len(set(self.image_names)) != len(self.image_names):
            raise InvariantViolation("image_names must be distinct")

    def to_json(self) -> str:
        payload = {
            "backbone_id": self.backbone_id,
            "image_size": list(self.image_size),
            "patch_size": self.patch_size,
            "grid": list(self.grid),
            "embed_dim": self.embed_dim,
            "has_attention": self.has_attention,
            "image_names": list(self.image_names),
            "dataset_tag": self.dataset_tag,
            "created_unix_ms": self.created_unix_ms,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "StoreMetadata":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MetadataMismatch(f"metadata is not valid JSON: {exc}") from exc
        missing = [k for k in _META_KEYS if k not in raw]
        if missing:
            raise MetadataMismatch(f"metadata missing keys: {missing}")
        # unknown keys are ignored for forward compatibility
        return cls(
            backbone_id=str(raw["backbone_id"]),
            image_size=(int(raw["image_size"][0]), int(raw["image_size"][1])),
            patch_size=int(raw["patch_size"]),
            grid=(int(raw["grid"][0]), int(raw["grid"][1])),
            embed_dim=int(raw["embed_dim"]),
            has_attention=bool(raw["has_attention"]),
            image_names=tuple(str(n) for n in raw["image_names"]),
            dataset_tag=str(raw["dataset_tag"]),
            created_unix_ms=int(raw["created_unix_ms"]),
        )


@dataclass
class PatchEmbeddingBank:
    """In-memory bank: metadata plus the embedding/attention tensors."""

    meta: StoreMetadata
    embeddings: np.ndarray  # (N, L, D) float32
    attention: np.ndarray | None = None  # (N, L) float32, raw CLS->patch rows

    def validate(self) -> None:
        self.meta.validate()
        n, L, d = self.meta.n_images, self.meta.n_patches, self.meta.embed_dim
        if self.embeddings.shape != (n, L, d):
            raise InvariantViolation(
                f"embeddings shape {self.embeddings.shape} != {(n, L, d)}"
            )
        if not np.all(np.isfinite(self.embeddings)):
            raise InvariantViolation("embeddings contain non-finite values")
        if self.meta.has_attention:
            if self.attention is None or self.attention.shape != (n, L):
                raise InvariantViolation(f"attention must have shape {(n, L)}")
            if not np.all(np.isfinite(self.attention)):
                raise InvariantViolation("attention contains non-finite values")
        elif self.attention is not None:
            raise InvariantViolation("attention present but has_attention is false")


@dataclass
class NormalizedBank:
    """Bank with unit-L2 patch vectors; near-zero inputs are flagged degenerate.

    Degenerate vectors are zeroed so that re-normalizing is a no-op; the
    scoring layer treats any distance involving one as exactly 1.0.
    """

    meta: StoreMetadata
    embeddings: np.ndarray  # (N, L, D) float32, unit rows except degenerate
    degenerate: np.ndarray  # (N, L) bool
    attention: np.ndarray | None = None


def expected_file_size(meta: StoreMetadata) -> int:
    """Closed-form size in bytes of the file a bank with this metadata produces."""
    n, L, d = meta.n_images, meta.n_patches, meta.embed_dim
    size = _HEADER.size + len(meta.to_json().encode("utf-8")) + 4 * n * L * d
    if meta.has_attention:
        size += 4 * n * L
    return size


def write_bank(bank: PatchEmbeddingBank, path: str | Path) -> None:
    """Serialize a bank to ``path``; refuses banks violating invariants."""
    bank.validate()
    meta_bytes = bank.meta.to_json().encode("utf-8")
    emb = np.ascontiguousarray(bank.embeddings, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(emb.tobytes())
        if bank.meta.has_attention:
            attn = np.ascontiguousarray(bank.attention, dtype="<f4")
            fh.write(attn.tobytes())


def read_bank(path: str | Path) -> PatchEmbeddingBank:
    """Load and validate a bank file."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: only {len(data)} bytes")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    off = _HEADER.size
    if len(data) < off + meta_len:
        raise TruncatedFile(f"{path}: truncated inside metadata")
    meta = StoreMetadata.from_json(data[off : off + meta_len].decode("utf-8"))
    try:
        meta.validate()
    except InvariantViolation as exc:
        raise MetadataMismatch(str(exc)) from exc
    off += meta_len

    n, L, d = meta.n_images, meta.n_patches, meta.embed_dim
    emb_bytes = 4 * n * L * d
    attn_bytes = 4 * n * L if meta.has_attention else 0
    expected = off + emb_bytes + attn_bytes
    if len(data) < expected:
        raise TruncatedFile(
            f"{path}: {len(data)} bytes, need {expected} for declared N={n} L={L} D={d}"
        )
    if len(data) > expected:
        raise MetadataMismatch(
            f"{path}: {len(data) - expected} trailing bytes beyond declared tensors"
        )

    emb = np.frombuffer(data, dtype="<f4", count=n * L * d, offset=off)
    emb = emb.reshape(n, L, d).copy()
    off += emb_bytes
    attention = None
    if meta.has_attention:
        attention = np.frombuffer(data, dtype="<f4", count=n * L, offset=off)
        attention = attention.reshape(n, L).copy()
        if not np.all(np.isfinite(attention)):
            raise NonFiniteValues(f"{path}: attention contains non-finite values")
    if not np.all(np.isfinite(emb)):
        raise NonFiniteValues(f"{path}: embeddings contain non-finite values")
    return PatchEmbeddingBank(meta=meta, embeddings=emb, attention=attention)


def normalize_bank(
    bank: PatchEmbeddingBank | NormalizedBank, epsilon: float = 1e-12
) -> NormalizedBank:
    """Scale every patch vector to unit L2 norm.

    Vectors with input norm below ``epsilon`` are flagged degenerate and
    zeroed rather than divided, so no NaN can propagate.
    """
    emb = np.asarray(bank.embeddings, dtype=np.float32)
    norms = np.linalg.norm(emb.astype(np.float64), axis=2)
    degenerate = norms < epsilon
    safe = np.where(degenerate, 1.0, norms)
    out = (emb / safe[:, :, None].astype(np.float32)).astype(np.float32)
    out[degenerate] = 0.0
    if isinstance(bank, NormalizedBank):
        degenerate = degenerate | bank.degenerate
        out[bank.degenerate] = 0.0
    return NormalizedBank(
        meta=bank.meta, embeddings=out, degenerate=degenerate, attention=bank.attention
    )


def with_timestamp_zeroed(meta: StoreMetadata) -> StoreMetadata:
    """Copy of the metadata with created_unix_ms fixed at 0 (for byte comparisons)."""
    return replace(meta, created_unix_ms=0)


def subset_normalized(nb: NormalizedBank, indices) -> NormalizedBank:
    """View of selected images as a bank of their own."""
    idx = list(indices)
    meta = replace(nb.meta, image_names=tuple(nb.meta.image_names[i] for i in idx))
    return NormalizedBank(
        meta=meta,
        embeddings=nb.embeddings[idx],
        degenerate=nb.degenerate[idx],
        attention=None if nb.attention is None else nb.attention[idx],
    )


def concat_banks(a: PatchEmbeddingBank, b: PatchEmbeddingBank) -> PatchEmbeddingBank:
    """Stack two banks with identical geometry into one."""
    for key in ("backbone_id", "image_size", "patch_size", "grid", "embed_dim", "has_attention"):
        if getattr(a.meta, key) != getattr(b.meta, key):
            raise InvariantViolation(f"banks differ in {key}")
    meta = replace(a.meta, image_names=a.meta.image_names + b.meta.image_names)
    attention = None
    if a.meta.has_attention:
        attention = np.concatenate([a.attention, b.attention], axis=0)
    return PatchEmbeddingBank(
        meta=meta,
        embeddings=np.concatenate([a.embeddings, b.embeddings], axis=0),
        attention=attention,
    )

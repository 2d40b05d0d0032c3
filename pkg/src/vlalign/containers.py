"""Portable storage and validation of embedding sets, catalogs and labels.

Container format (little-endian throughout):

    magic "RCLP" (4 bytes) | format version u32 (=1) | section tag u8 | body

Section bodies:

    tag 1, embeddings:  n u64, d u64, unit_norm u8,
                        n*d IEEE-754 binary32 row-major,
                        n length-prefixed UTF-8 ids (u32 length each)
    tag 2, catalog:     m u64, m length-prefixed UTF-8 names,
                        u8 count of embedded embedding sections (1 or 2),
                        inline embedding sections (tag byte + body each,
                        single-template first)
    tag 3, labels:      n u64, n i64 values (-1 = UNLABELED)
    tag 4, basis:       d u64, r u64, variant u8, d*r binary64 column-major
    tag 5, adapter:     d u64, gain d*binary64, bias d*binary64

Embeddings are stored as 32-bit floats at the boundary; everything in memory
is 64-bit. Objects are immutable after load by convention and safe to share
across threads for reads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    ContainerIOError,
    DegenerateInputError,
    FormatError,
    ValidationError,
)

MAGIC = b"RCLP"
FORMAT_VERSION = 1

TAG_EMBEDDINGS = 1
TAG_CATALOG = 2
TAG_LABELS = 3
TAG_BASIS = 4
TAG_ADAPTER = 5

UNLABELED = -1

UNIT_NORM_TOL = 1e-4
ZERO_ROW_EPS = 1e-12


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{what} contains NaN or Inf")


@dataclass
class EmbeddingSet:
    """An n x d matrix of embedding rows with opaque string identifiers."""

    data: np.ndarray
    ids: tuple
    unit_norm: bool = False

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.ids = tuple(str(i) for i in self.ids)
        if self.data.ndim != 2:
            raise ValidationError("embedding data must be a 2-D matrix")
        n, d = self.data.shape
        if n < 1:
            raise ValidationError("embedding set must have at least one row")
        if d < 2:
            raise ValidationError("embedding dims must be at least 2")
        if len(self.ids) != n:
            raise ValidationError(f"expected {n} ids, got {len(self.ids)}")
        if len(set(self.ids)) != n:
            raise ValidationError("embedding ids are not unique")
        _check_finite(self.data, "embedding data")
        if self.unit_norm:
            norms = np.linalg.norm(self.data, axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > UNIT_NORM_TOL:
                raise ValidationError(
                    f"unit_norm flag set but a row norm deviates by {worst:.2e}"
                )

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    @staticmethod
    def sequential_ids(n: int, prefix: str = "row") -> tuple:
        return tuple(f"{prefix}_{i}" for i in range(n))


@dataclass
class ClassCatalog:
    """Class names plus their text embeddings (single and optional multi template)."""

    names: tuple
    single_template_embeddings: EmbeddingSet
    multi_template_embeddings: Optional[EmbeddingSet] = None

    def __post_init__(self):
        self.names = tuple(str(n) for n in self.names)
        m = len(self.names)
        if m < 2:
            raise ValidationError("catalog needs at least two classes")
        for which, emb in (
            ("single-template", self.single_template_embeddings),
            ("multi-template", self.multi_template_embeddings),
        ):
            if emb is None:
                continue
            if emb.rows != m:
                raise ValidationError(
                    f"{which} embeddings have {emb.rows} rows for {m} classes"
                )
        if self.multi_template_embeddings is not None:
            if (
                self.multi_template_embeddings.dims
                != self.single_template_embeddings.dims
            ):
                raise ValidationError("catalog embedding sets disagree on dims")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def text_embeddings(self, templates: str = "single") -> EmbeddingSet:
        """Pick a text set; 'multi' falls back to single when absent."""
        if templates == "multi" and self.multi_template_embeddings is not None:
            return self.multi_template_embeddings
        if templates not in ("single", "multi"):
            raise ValidationError(f"unknown template mode {templates!r}")
        return self.single_template_embeddings


@dataclass
class LabelVector:
    """Per-row integer labels; -1 marks UNLABELED."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.int64)
        if self.values.ndim != 1:
            raise ValidationError("labels must be a 1-D vector")
        if self.values.size and int(self.values.min()) < UNLABELED:
            raise ValidationError("label values below the UNLABELED sentinel")

    def __len__(self) -> int:
        return self.values.size

    def check_against(self, num_classes: int) -> None:
        if self.values.size and int(self.values.max()) >= num_classes:
            raise ValidationError(
                f"label value {int(self.values.max())} out of range for "
                f"{num_classes} classes"
            )


def l2_normalize(x: EmbeddingSet, eps: float = ZERO_ROW_EPS) -> EmbeddingSet:
    """Return a copy of x with every row scaled to unit L2 norm.

    Rows with norm <= eps are degenerate and rejected by id.
    """
    norms = np.linalg.norm(x.data, axis=1)
    bad = np.flatnonzero(norms <= eps)
    if bad.size:
        raise DegenerateInputError(
            f"cannot normalize zero row (id={x.ids[bad[0]]!r}, norm={norms[bad[0]]:.3e})"
        )
    return EmbeddingSet(x.data / norms[:, None], x.ids, unit_norm=True)


# --- binary encoding -------------------------------------------------------


class _Cursor:
    """Sequential reader over a bytes buffer; short reads raise io_error."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerIOError(
                f"truncated payload: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        length = self.u32()
        raw = self.take(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 string at offset {self.pos}") from exc

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(itemsize * count)
        return np.frombuffer(raw, dtype=dtype, count=count)


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _encode_embeddings_body(x: EmbeddingSet) -> bytes:
    parts = [struct.pack("<QQB", x.rows, x.dims, 1 if x.unit_norm else 0)]
    parts.append(np.ascontiguousarray(x.data, dtype="<f4").tobytes())
    parts.extend(_pack_string(i) for i in x.ids)
    return b"".join(parts)


def _decode_embeddings_body(cur: _Cursor) -> EmbeddingSet:
    n = cur.u64()
    d = cur.u64()
    unit = cur.u8()
    if unit not in (0, 1):
        raise FormatError(f"invalid unit_norm byte {unit}")
    data = cur.array("<f4", n * d).astype(np.float64).reshape(n, d) if n * d else None
    if data is None:
        raise ValidationError("embedding section with empty matrix")
    ids = tuple(cur.string() for _ in range(n))
    return EmbeddingSet(data, ids, unit_norm=bool(unit))


def _encode_catalog_body(cat: ClassCatalog) -> bytes:
    parts = [struct.pack("<Q", cat.num_classes)]
    parts.extend(_pack_string(name) for name in cat.names)
    sections = [cat.single_template_embeddings]
    if cat.multi_template_embeddings is not None:
        sections.append(cat.multi_template_embeddings)
    parts.append(struct.pack("<B", len(sections)))
    for emb in sections:
        parts.append(struct.pack("<B", TAG_EMBEDDINGS))
        parts.append(_encode_embeddings_body(emb))
    return b"".join(parts)


def _decode_catalog_body(cur: _Cursor) -> ClassCatalog:
    m = cur.u64()
    names = tuple(cur.string() for _ in range(m))
    count = cur.u8()
    if count not in (1, 2):
        raise FormatError(f"catalog embeds {count} embedding sections, expected 1 or 2")
    sets = []
    for _ in range(count):
        tag = cur.u8()
        if tag != TAG_EMBEDDINGS:
            raise FormatError(f"catalog inline section has tag {tag}, expected 1")
        sets.append(_decode_embeddings_body(cur))
    multi = sets[1] if count == 2 else None
    return ClassCatalog(names, sets[0], multi)


def _encode_labels_body(lv: LabelVector) -> bytes:
    return struct.pack("<Q", len(lv)) + np.ascontiguousarray(
        lv.values, dtype="<i8"
    ).tobytes()


def _decode_labels_body(cur: _Cursor) -> LabelVector:
    n = cur.u64()
    values = cur.array("<i8", n).astype(np.int64)
    return LabelVector(values)


def _encode_basis_body(basis) -> bytes:
    d = basis.source_dims
    r = basis.basis.shape[1] if basis.basis.size else 0
    body = struct.pack("<QQB", d, r, int(basis.variant))
    # column-major: columns are the basis directions
    body += np.asarray(basis.basis, dtype="<f8").tobytes(order="F")
    return body


def _decode_basis_body(cur: _Cursor):
    from .projection import ProjectionBasis, Variant

    d = cur.u64()
    r = cur.u64()
    variant_byte = cur.u8()
    try:
        variant = Variant(variant_byte)
    except ValueError:
        raise FormatError(f"unknown projection variant byte {variant_byte}")
    flat = cur.array("<f8", d * r).astype(np.float64)
    basis = flat.reshape((d, r), order="F") if r else np.zeros((d, 0))
    rank = d if variant is Variant.P0 else r
    return ProjectionBasis(
        basis=np.ascontiguousarray(basis),
        variant=variant,
        source_dims=d,
        source_classes=0,
        rank=rank,
    )


def _encode_adapter_body(adapter) -> bytes:
    d = adapter.gain.size
    return (
        struct.pack("<Q", d)
        + np.ascontiguousarray(adapter.gain, dtype="<f8").tobytes()
        + np.ascontiguousarray(adapter.bias, dtype="<f8").tobytes()
    )


def _decode_adapter_body(cur: _Cursor):
    from .adapt import AffineAdapter

    d = cur.u64()
    gain = cur.array("<f8", d).astype(np.float64)
    bias = cur.array("<f8", d).astype(np.float64)
    return AffineAdapter(gain=gain, bias=bias)


def _tag_for(obj) -> int:
    from .adapt import AffineAdapter
    from .projection import ProjectionBasis

    if isinstance(obj, EmbeddingSet):
        return TAG_EMBEDDINGS
    if isinstance(obj, ClassCatalog):
        return TAG_CATALOG
    if isinstance(obj, LabelVector):
        return TAG_LABELS
    if isinstance(obj, ProjectionBasis):
        return TAG_BASIS
    if isinstance(obj, AffineAdapter):
        return TAG_ADAPTER
    raise ValidationError(f"cannot serialize object of type {type(obj).__name__}")


def encode_container(obj) -> bytes:
    """Serialize a container object to bytes. Deterministic for equal input."""
    tag = _tag_for(obj)
    if tag == TAG_EMBEDDINGS:
        # re-run invariants in case the arrays were mutated after construction
        EmbeddingSet(obj.data, obj.ids, obj.unit_norm)
        body = _encode_embeddings_body(obj)
    elif tag == TAG_CATALOG:
        body = _encode_catalog_body(obj)
    elif tag == TAG_LABELS:
        body = _encode_labels_body(obj)
    elif tag == TAG_BASIS:
        body = _encode_basis_body(obj)
    else:
        body = _encode_adapter_body(obj)
    return MAGIC + struct.pack("<IB", FORMAT_VERSION, tag) + body


def decode_container(buf: bytes):
    cur = _Cursor(buf)
    magic = cur.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    tag = cur.u8()
    if tag == TAG_EMBEDDINGS:
        obj = _decode_embeddings_body(cur)
    elif tag == TAG_CATALOG:
        obj = _decode_catalog_body(cur)
    elif tag == TAG_LABELS:
        obj = _decode_labels_body(cur)
    elif tag == TAG_BASIS:
        obj = _decode_basis_body(cur)
    elif tag == TAG_ADAPTER:
        obj = _decode_adapter_body(cur)
    else:
        raise FormatError(f"unknown section tag {tag}")
    if cur.pos != len(buf):
        raise FormatError(f"{len(buf) - cur.pos} trailing bytes after section body")
    return obj


def save_container(obj, path: Union[str, Path]) -> None:
    """Write obj to path in the container format. Bytes are deterministic."""
    payload = encode_container(obj)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise ContainerIOError(f"cannot write {path}: {exc}") from exc


def load_container(path: Union[str, Path]):
    """Read one container object; all type invariants are verified on load."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerIOError(f"cannot read {path}: {exc}") from exc
    return decode_container(buf)

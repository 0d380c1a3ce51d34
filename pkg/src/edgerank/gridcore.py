"""Dense 2-D map types, annotation merging and the EMAP / PGM file formats.

Every map wraps a read-only 2-D numpy array in ``values`` and supports
``np.asarray(m)``, so the rest of the package accepts either a map object or
a plain array.

EMAP layout (little-endian)::

    offset  size  field
    0       4     magic b"EMAP"
    4       1     version (1)
    5       1     dtype code (1 = float32, 2 = uint8)
    6       4     height (u32)
    10      4     width  (u32)
    14      ...   row-major payload
"""
from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import FormatError, InvalidAnnotationSet, RangeError, ShapeError

__all__ = [
    "ProbMap",
    "LabelMap",
    "CertaintyMap",
    "MergedCountMap",
    "AnnotationSet",
    "merge_annotations",
    "binarize_merged",
    "or_combine",
    "read_map",
    "write_map",
    "read_pgm",
    "write_pgm",
]

EMAP_MAGIC = b"EMAP"
EMAP_VERSION = 1
DTYPE_FLOAT32 = 1
DTYPE_UINT8 = 2
_HEADER = struct.Struct("<4sBBII")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_2d(a: np.ndarray, name: str) -> None:
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be at least 1x1, got shape {a.shape}")


class _Map:
    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.values.dtype == other.values.dtype and np.array_equal(
            self.values, other.values
        )

    def __hash__(self):
        return hash((type(self).__name__, self.values.shape, self.values.tobytes()))


@dataclass(frozen=True, eq=False)
class ProbMap(_Map):
    """Edge probabilities in [0, 1], stored as float32."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        _check_2d(v, "ProbMap")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise RangeError("ProbMap values must be finite and within [0, 1]")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True, eq=False)
class LabelMap(_Map):
    """Binary edge labels stored as uint8 {0, 1}."""

    values: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.values)
        _check_2d(raw, "LabelMap")
        if raw.dtype == bool:
            v = raw.astype(np.uint8)
        else:
            if not np.all(np.isin(raw, (0, 1))):
                raise RangeError("LabelMap values must be exactly 0 or 1")
            v = raw.astype(np.uint8)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True, eq=False)
class CertaintyMap(_Map):
    """Per-pixel annotator agreement in [0, 1], stored as float32."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        _check_2d(v, "CertaintyMap")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise RangeError("CertaintyMap values must be finite and within [0, 1]")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True, eq=False)
class MergedCountMap(_Map):
    """Number of annotators marking each pixel."""

    values: np.ndarray
    n: int

    def __post_init__(self):
        v = np.asarray(self.values)
        _check_2d(v, "MergedCountMap")
        v = v.astype(np.int32)
        if v.min() < 0 or v.max() > self.n:
            raise RangeError(f"counts must lie in [0, {self.n}]")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Ordered label maps from ``n`` annotators of the same image."""

    maps: tuple

    def __post_init__(self):
        maps = tuple(m if isinstance(m, LabelMap) else LabelMap(np.asarray(m)) for m in self.maps)
        if not maps:
            raise InvalidAnnotationSet("an annotation set needs at least one map")
        shape = maps[0].shape
        for k, m in enumerate(maps):
            if m.shape != shape:
                raise InvalidAnnotationSet(
                    f"annotation {k} has shape {m.shape}, expected {shape}"
                )
        object.__setattr__(self, "maps", maps)

    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps[0].shape

    def stack(self) -> np.ndarray:
        """(n, H, W) uint8 array of all maps."""
        return np.stack([m.values for m in self.maps])

    def __len__(self):
        return len(self.maps)

    def __iter__(self):
        return iter(self.maps)

    def __getitem__(self, k):
        return self.maps[k]


AnnotationLike = Union[AnnotationSet, Sequence]


def as_annotation_set(s: AnnotationLike) -> AnnotationSet:
    if isinstance(s, AnnotationSet):
        return s
    try:
        return AnnotationSet(tuple(s))
    except (ShapeError, RangeError) as exc:
        raise InvalidAnnotationSet(str(exc)) from exc


def merge_annotations(s: AnnotationLike) -> MergedCountMap:
    s = as_annotation_set(s)
    return MergedCountMap(s.stack().sum(axis=0, dtype=np.int32), s.n)


def binarize_merged(counts: MergedCountMap, tau: float) -> LabelMap:
    """Threshold annotator counts into training labels.

    ``tau == 0`` keeps every marked pixel (strict ``count > 0``); any positive
    ``tau`` keeps pixels with ``count >= tau``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    c = np.asarray(counts)
    if tau == 0:
        return LabelMap(c > 0)
    return LabelMap(c >= tau)


def or_combine(s: AnnotationLike) -> LabelMap:
    s = as_annotation_set(s)
    return LabelMap(np.any(s.stack() > 0, axis=0))


# ---------------------------------------------------------------------------
# file formats


def _emap_bytes(values: np.ndarray, code: int) -> bytes:
    h, w = values.shape
    payload = values.astype("<f4" if code == DTYPE_FLOAT32 else "u1").tobytes(order="C")
    return _HEADER.pack(EMAP_MAGIC, EMAP_VERSION, code, h, w) + payload


def _parse_emap(data: bytes, source: str) -> Union[ProbMap, LabelMap]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated EMAP header")
    magic, version, code, h, w = _HEADER.unpack_from(data)
    if magic != EMAP_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != EMAP_VERSION:
        raise FormatError(f"{source}: unsupported EMAP version {version}")
    if code == DTYPE_FLOAT32:
        dtype, item = np.dtype("<f4"), 4
    elif code == DTYPE_UINT8:
        dtype, item = np.dtype("u1"), 1
    else:
        raise FormatError(f"{source}: unknown dtype code {code}")
    if h < 1 or w < 1:
        raise FormatError(f"{source}: empty map {h}x{w}")
    need = _HEADER.size + h * w * item
    if len(data) != need:
        raise FormatError(f"{source}: payload is {len(data) - _HEADER.size} bytes, expected {need - _HEADER.size}")
    values = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(h, w)
    if code == DTYPE_FLOAT32:
        values = values.astype(np.float32)
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise RangeError(f"{source}: EMAP probabilities outside [0, 1]")
        return ProbMap(values)
    if values.max() > 1:
        raise RangeError(f"{source}: EMAP labels must be 0 or 1")
    return LabelMap(values.copy())


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_pgm(path) -> LabelMap:
    """Read an 8-bit binary PGM (P5); pixels above half of maxval become 1."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: empty image")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + w * h]
    if len(payload) != w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return LabelMap(px > maxval // 2)


def write_pgm(m, path) -> None:
    v = np.asarray(m)
    if not np.all(np.isin(v, (0, 1))):
        raise RangeError("only binary label maps can be written as PGM")
    h, w = v.shape
    body = (v.astype(np.uint8) * 255).tobytes()
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + body)


def read_map(path) -> Union[ProbMap, LabelMap]:
    """Load a map from EMAP, or from PGM when the file starts with ``P5``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"P5":
        return read_pgm(path)
    return _parse_emap(path.read_bytes(), str(path))


def write_map(m, path) -> None:
    """Write ``m`` as EMAP; ``.pgm`` paths get a PGM (binary maps only)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(m, path)
        return
    if isinstance(m, LabelMap):
        data = _emap_bytes(m.values, DTYPE_UINT8)
    else:
        v = np.asarray(m)
        if v.dtype == np.uint8 or v.dtype == bool:
            data = _emap_bytes(LabelMap(v).values, DTYPE_UINT8)
        else:
            v = v.astype(np.float32)
            if v.ndim != 2:
                raise ShapeError(f"maps must be 2-D, got shape {v.shape}")
            if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
                raise RangeError("EMAP float payload must lie in [0, 1]")
            data = _emap_bytes(v, DTYPE_FLOAT32)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_annotation_set(paths: Iterable) -> AnnotationSet:
    maps = []
    for p in paths:
        m = read_map(p)
        if not isinstance(m, LabelMap):
            m = LabelMap(np.asarray(m) > 0.5)
        maps.append(m)
    return as_annotation_set(maps)

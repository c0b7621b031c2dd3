"""Per-image feature vectors keyed by image id.

Two on-disk encodings are supported. The binary one (``.cpfs``) is::

    b"CPFS" | u32 version=1 | u32 count | u32 dim
    count x ( u16 id_len | id utf-8 bytes | dim x float32 little-endian )

and round-trips bit-exactly. The JSON one is ``{"dim": D, "features": {id: [...]}}``
and is meant for small hand-written fixtures.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"CPFS"
VERSION = 1
DEFAULT_DIM = 512

_HEADER = struct.Struct("<4sIII")
_IDLEN = struct.Struct("<H")


class FeatureFormatError(ValueError):
    pass


class FeatureStore:
    """Immutable mapping image-id -> float32 vector, backed by one matrix."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        matrix = np.ascontiguousarray(matrix, dtype="<f4")
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError(f"matrix shape {matrix.shape} does not match {len(ids)} ids")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("feature store contains non-finite values")
        self._ids = tuple(ids)
        self._index = {image_id: row for row, image_id in enumerate(self._ids)}
        if len(self._index) != len(self._ids):
            raise ValueError("duplicate image id in feature store")
        matrix.setflags(write=False)
        self._matrix = matrix

    @classmethod
    def from_mapping(cls, entries: Mapping[str, Iterable[float]], dim: int | None = None):
        ids = list(entries)
        rows = [np.asarray(entries[i], dtype=np.float32) for i in ids]
        if dim is None:
            dim = rows[0].shape[0] if rows else DEFAULT_DIM
        for image_id, row in zip(ids, rows):
            if row.shape != (dim,):
                raise FeatureFormatError(f"{image_id!r}: expected dim {dim}, got {row.shape}")
        matrix = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
        return cls(ids, matrix)

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self._index

    def __getitem__(self, image_id: str) -> np.ndarray:
        try:
            return self._matrix[self._index[image_id]]
        except KeyError:
            raise KeyError(f"image id {image_id!r} not in feature store") from None

    def matrix_for(self, ids: Sequence[str]) -> np.ndarray:
        """Rows for ``ids`` as float64, in the given order."""
        missing = [i for i in ids if i not in self._index]
        if missing:
            raise KeyError(f"image ids not in feature store: {missing}")
        rows = [self._index[i] for i in ids]
        return self._matrix[rows].astype(np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return self._ids == other._ids and np.array_equal(
            self._matrix.view(np.uint32), other._matrix.view(np.uint32)
        )

    def __repr__(self) -> str:
        return f"FeatureStore(count={len(self)}, dim={self.dim})"


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_feature_store(store: FeatureStore, path: str | os.PathLike) -> None:
    path = Path(path)
    if path.suffix == ".json":
        doc = {
            "dim": store.dim,
            "features": {i: store[i].tolist() for i in store.ids},
        }
        _atomic_write(path, json.dumps(doc).encode())
        return
    parts = [_HEADER.pack(MAGIC, VERSION, len(store), store.dim)]
    for image_id, row in zip(store.ids, store.matrix):
        raw = image_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FeatureFormatError(f"image id too long: {image_id[:40]!r}...")
        parts.append(_IDLEN.pack(len(raw)))
        parts.append(raw)
        parts.append(row.astype("<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def load_feature_store(path: str | os.PathLike) -> FeatureStore:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".json":
        try:
            doc = json.loads(data)
            dim = int(doc["dim"])
            return FeatureStore.from_mapping(doc["features"], dim=dim)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FeatureFormatError(f"{path}: malformed feature JSON: {exc}") from exc
    if len(data) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    row_bytes = 4 * dim
    matrix = np.empty((count, dim), dtype="<f4")
    ids = []
    off = _HEADER.size
    view = memoryview(data)
    for row in range(count):
        if off + _IDLEN.size > len(data):
            raise FeatureFormatError(f"{path}: truncated at record {row}")
        (n,) = _IDLEN.unpack_from(data, off)
        off += _IDLEN.size
        end = off + n + row_bytes
        if end > len(data):
            raise FeatureFormatError(f"{path}: truncated at record {row}")
        ids.append(bytes(view[off : off + n]).decode("utf-8"))
        matrix[row] = np.frombuffer(view[off + n : end], dtype="<f4")
        off = end
    if off != len(data):
        raise FeatureFormatError(f"{path}: {len(data) - off} trailing bytes (dim mismatch?)")
    return FeatureStore(ids, matrix)


def synth_features(
    class_ids: Sequence[int],
    dim: int = DEFAULT_DIM,
    noise_sigma: float = 0.1,
    seed: int = 0,
    image_ids: Sequence[str] | None = None,
) -> FeatureStore:
    """Synthetic stand-in for extracted image features.

    Image ``j`` (id ``image_ids[j]``, default ``"img_{j:06d}"``) gets the unit-norm
    centroid of ``class_ids[j]`` plus isotropic Gaussian noise. Centroids are
    seeded per class, so a class keeps its centroid regardless of which other
    classes are present.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if image_ids is None:
        image_ids = [f"img_{j:06d}" for j in range(len(class_ids))]
    if len(image_ids) != len(class_ids):
        raise ValueError("image_ids and class_ids differ in length")
    centroids: dict[int, np.ndarray] = {}
    for cls in dict.fromkeys(class_ids):
        v = np.random.default_rng([seed, 0x5EED, int(cls)]).standard_normal(dim)
        centroids[cls] = v / np.linalg.norm(v)
    noise = np.random.default_rng([seed, 0x401E]).standard_normal((len(class_ids), dim))
    matrix = np.stack([centroids[c] for c in class_ids]) if class_ids else np.zeros((0, dim))
    matrix = matrix + noise_sigma * noise
    return FeatureStore(image_ids, matrix.astype(np.float32))

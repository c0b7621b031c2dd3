"""Grid geometry, arrangements and the graph view of a collage.

Cells are numbered row-major from 0 at the top-left corner. An arrangement
``index_of`` assigns image ``j`` to cell ``index_of[j]``. Two images are joined
by an edge when their cells share a side (4-neighbourhood, never diagonal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .features import FeatureStore


class ArrangementError(ValueError):
    """Base class for invalid arrangements."""


class WrongLengthError(ArrangementError):
    pass


class DuplicateCellError(ArrangementError):
    pass


class MissingCellError(ArrangementError):
    pass


@dataclass(frozen=True)
class GridSpec:
    k: int
    n: int

    def __post_init__(self):
        if self.n < 1 or self.k != self.n * self.n:
            raise ValueError(f"k={self.k} is not n*n for n={self.n}")

    @classmethod
    def from_k(cls, k: int) -> "GridSpec":
        n = math.isqrt(k)
        if n * n != k:
            raise ValueError(f"{k} images do not fill a square grid")
        return cls(k=k, n=n)

    @classmethod
    def from_side(cls, n: int) -> "GridSpec":
        return cls(k=n * n, n=n)


@dataclass(frozen=True)
class CellCoord:
    r: int
    c: int


def pos_to_rc(i: int, n: int) -> CellCoord:
    if not 0 <= i < n * n:
        raise IndexError(f"cell {i} outside a {n}x{n} grid")
    r, c = divmod(i, n)
    return CellCoord(r, c)


def rc_to_pos(r: int, c: int, n: int) -> int:
    if not (0 <= r < n and 0 <= c < n):
        raise IndexError(f"({r}, {c}) outside a {n}x{n} grid")
    return r * n + c


@dataclass(frozen=True)
class Arrangement:
    index_of: tuple[int, ...]

    def __init__(self, index_of: Sequence[int]):
        object.__setattr__(self, "index_of", tuple(int(i) for i in index_of))

    def __len__(self) -> int:
        return len(self.index_of)

    def __iter__(self):
        return iter(self.index_of)

    def __getitem__(self, j: int) -> int:
        return self.index_of[j]

    def image_at(self) -> tuple[int, ...]:
        """Inverse view: entry ``i`` is the image placed in cell ``i``."""
        inv = [0] * len(self.index_of)
        for j, cell in enumerate(self.index_of):
            inv[cell] = j
        return tuple(inv)

    @classmethod
    def identity(cls, k: int) -> "Arrangement":
        return cls(range(k))


def validate_arrangement(a: Arrangement | Sequence[int], k: int) -> None:
    cells = list(a)
    if len(cells) != k:
        raise WrongLengthError(f"expected {k} cells, got {len(cells)}")
    seen: set[int] = set()
    for cell in cells:
        if not 0 <= cell < k:
            raise MissingCellError(f"cell {cell} outside 0..{k - 1}")
        if cell in seen:
            raise DuplicateCellError(f"cell {cell} assigned twice")
        seen.add(cell)
    # length matches and no duplicates in range, so every cell is covered


def is_valid_arrangement(a: Arrangement | Sequence[int], k: int) -> bool:
    try:
        validate_arrangement(a, k)
    except ArrangementError:
        return False
    return True


@lru_cache(maxsize=None)
def cell_adjacency(n: int) -> np.ndarray:
    """K x K 0/1 matrix over *cells* (not images) of the n x n grid."""
    k = n * n
    cadj = np.zeros((k, k), dtype=np.int8)
    for i in range(k):
        r, c = divmod(i, n)
        if c + 1 < n:
            cadj[i, i + 1] = cadj[i + 1, i] = 1
        if r + 1 < n:
            cadj[i, i + n] = cadj[i + n, i] = 1
    cadj.setflags(write=False)
    return cadj


def adjacency_from_arrangement(a: Arrangement | Sequence[int], spec: GridSpec) -> np.ndarray:
    validate_arrangement(a, spec.k)
    idx = np.fromiter(a, dtype=np.intp, count=spec.k)
    return cell_adjacency(spec.n)[np.ix_(idx, idx)].copy()


def adjacency_batch(arrangements: np.ndarray, n: int) -> np.ndarray:
    """Vectorised adjacency for a (B, K) array of already validated arrangements."""
    cadj = cell_adjacency(n)
    arr = np.asarray(arrangements, dtype=np.intp)
    return cadj[arr[:, :, None], arr[:, None, :]]


def edge_set(adj: np.ndarray) -> set[tuple[int, int]]:
    p, q = np.nonzero(np.triu(adj, 1))
    return {(int(a), int(b)) for a, b in zip(p, q)}


@dataclass(frozen=True)
class CollageGraph:
    adj: np.ndarray
    feats: np.ndarray
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.adj.shape != (self.feats.shape[0],) * 2:
            raise ValueError(
                f"adjacency {self.adj.shape} does not match {self.feats.shape[0]} feature rows"
            )
        if self.ids and len(self.ids) != self.feats.shape[0]:
            raise ValueError("ids length does not match feature rows")

    @property
    def k(self) -> int:
        return self.feats.shape[0]


def build_collage_graph(
    a: Arrangement | Sequence[int], ids: Sequence[str], store: FeatureStore
) -> CollageGraph:
    spec = GridSpec.from_k(len(ids))
    adj = adjacency_from_arrangement(a, spec)
    feats = store.matrix_for(ids)
    return CollageGraph(adj=adj, feats=feats, ids=tuple(ids))

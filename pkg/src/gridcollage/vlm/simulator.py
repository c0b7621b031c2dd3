"""A seeded stand-in for the VLM.

Per-cell correctness follows an additive model: a base accuracy for the cell
position, minus a difficulty term for the image, plus a bonus for each
same-class 4-neighbour and a penalty for each same-class image elsewhere in
the collage. The sum is clamped to [0.01, 0.99]. Localisation errors are
modelled as label swaps between neighbouring cells.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..dataset import CollageSpec
from ..grid import Arrangement, cell_adjacency
from .labels import normalize_label

P_MIN, P_MAX = 0.01, 0.99

# qualitative shape only: top-left best, bottom-left worst, small last-row rebound
DEFAULT_A_POS = {
    2: (0.52, 0.47, 0.41, 0.44),
    3: (0.42, 0.33, 0.31, 0.28, 0.25, 0.27, 0.22, 0.27, 0.30),
}


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    a_pos: tuple[float, ...]
    delta_c: float = 0.0
    delta_s: float = 0.0
    p_loc: float = 0.0
    difficulty: Mapping[str, float] = field(default_factory=dict)
    beta: float = 0.0
    seed: int = 0
    p_adjacent_confusion: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "a_pos", tuple(float(a) for a in self.a_pos))
        if any(not 0.0 <= a <= 1.0 for a in self.a_pos):
            raise SimConfigError("a_pos entries must lie in [0, 1]")
        for name in ("p_loc", "p_adjacent_confusion"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SimConfigError(f"{name} must lie in [0, 1]")

    @classmethod
    def default(cls, n: int, **kw) -> "SimConfig":
        try:
            return cls(DEFAULT_A_POS[n], **kw)
        except KeyError:
            raise SimConfigError(f"no default position accuracies for a {n}x{n} grid") from None

    @property
    def k(self) -> int:
        return len(self.a_pos)


def collage_stream(seed: int, collage_name: str) -> np.random.Generator:
    digest = hashlib.sha256(collage_name.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def _check(spec: CollageSpec, sim: SimConfig):
    if sim.k != spec.k:
        raise SimConfigError(f"a_pos has {sim.k} entries, collage {spec.collage_name} has {spec.k} cells")


def cell_probabilities(spec: CollageSpec, sim: SimConfig) -> np.ndarray:
    """Probability that each cell is labelled correctly before localisation swaps."""
    _check(spec, sim)
    adj = cell_adjacency(spec.n)
    labels = np.array([normalize_label(s) for s in spec.labels()], dtype=object)
    same = (labels[:, None] == labels[None, :]) & ~np.eye(spec.k, dtype=bool)
    n_adj = (same & adj).sum(axis=1)
    n_far = same.sum(axis=1) - n_adj
    d = np.array([sim.difficulty.get(img, 0.0) for img in spec.images()])
    p = np.asarray(sim.a_pos) - sim.beta * d + sim.delta_c * n_adj - sim.delta_s * n_far
    return np.clip(p, P_MIN, P_MAX)


def localization_swaps(n: int, p_loc: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Disjoint neighbour pairs whose labels trade places.

    Cells are visited in order; a cell not yet involved in a swap fires with
    probability ``p_loc`` and pairs with a uniformly chosen free neighbour.
    """
    adj = cell_adjacency(n)
    busy: set[int] = set()
    pairs = []
    for i in range(n * n):
        fire = rng.random() < p_loc
        if not fire or i in busy:
            continue
        free = [j for j in np.flatnonzero(adj[i]) if j not in busy]
        if not free:
            continue
        j = int(free[rng.integers(len(free))])
        busy.update((i, j))
        pairs.append((i, j))
    return pairs


def simulate_recognition(spec: CollageSpec, arrangement: Arrangement | Sequence[int] | None,
                         sim: SimConfig, categories: Sequence[str],
                         rng: np.random.Generator) -> dict[int, str]:
    """Predicted label per cell for ``spec`` (after moving its images by ``arrangement``)."""
    if arrangement is not None:
        spec = spec.rearranged(Arrangement(arrangement))
    p = cell_probabilities(spec, sim)
    adj = cell_adjacency(spec.n)
    truth = [normalize_label(s) for s in spec.labels()]
    vocab = sorted({normalize_label(c) for c in categories})
    out: dict[int, str] = {}
    for i in range(spec.k):
        u, flavour = rng.random(), rng.random()
        if u < p[i]:
            out[i] = truth[i]
            continue
        confusers = [truth[j] for j in np.flatnonzero(adj[i]) if truth[j] != truth[i]]
        if confusers and flavour < sim.p_adjacent_confusion:
            out[i] = confusers[rng.integers(len(confusers))]
            continue
        others = [c for c in vocab if c != truth[i]]
        out[i] = others[rng.integers(len(others))] if others else "unknown"
    for i, j in localization_swaps(spec.n, sim.p_loc, rng):
        out[i], out[j] = out[j], out[i]
    return out

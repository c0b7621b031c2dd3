"""Arrangement search: a genetic algorithm driven by a fitness surrogate, and
a random/exhaustive baseline under the same evaluation accounting.

Randomness is derived from ``(seed, generation, slot)`` so that a run does not
depend on the order in which fitness values come back.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .features import FeatureStore
from .grid import Arrangement, GridSpec, adjacency_batch
from .predictor import GraphStack, PredictorParams, id_ranks, predict_stack


class FitnessError(ValueError):
    pass


@runtime_checkable
class BatchFitness(Protocol):
    def batch(self, arrangements: np.ndarray) -> np.ndarray: ...


FitnessFn = Callable[[Arrangement], float]


class PredictorFitness:
    """Surrogate fitness: predicted accuracy of the collage graph for ``ids``."""

    def __init__(self, params: PredictorParams, ids: Sequence[str], store: FeatureStore):
        self.params = params
        self.grid = GridSpec.from_k(len(ids))
        self.feats = store.matrix_for(ids)
        self.rank = id_ranks(list(ids), len(ids))

    def batch(self, arrangements: np.ndarray) -> np.ndarray:
        arr = np.asarray(arrangements, dtype=np.intp)
        b = arr.shape[0]
        stack = GraphStack(
            A=adjacency_batch(arr, self.grid.n).astype(np.float64),
            X=np.broadcast_to(self.feats, (b, *self.feats.shape)),
            rank=np.broadcast_to(self.rank, (b, self.grid.k)),
        )
        return predict_stack(self.params, stack)

    def __call__(self, a: Arrangement) -> float:
        return float(self.batch(np.asarray([tuple(a)]))[0])


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    elites: int = 20
    crossover_rate: float = 0.6
    mutation_rate: float = 0.2
    max_generations: int = 10
    saturation: int | None = 3
    max_evaluations: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ValueError(f"need 1 <= elites <= population, got {self.elites}/{self.population}")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if self.saturation is not None and self.saturation < 1:
            raise ValueError("saturation must be >= 1")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")

    @classmethod
    def for_grid(cls, n: int, **overrides) -> "GaConfig":
        """Published population settings: 3x3 uses 100/20/10 gens, 2x2 uses 5/3/5 gens."""
        base = {2: dict(population=5, elites=3, max_generations=5),
                3: dict(population=100, elites=20, max_generations=10)}.get(n, {})
        return cls(**{**base, **overrides})


@dataclass(frozen=True)
class TraceEntry:
    generation: int
    evaluations: int
    best_fitness: float
    best_arrangement: Arrangement
    elapsed_ms: float


@dataclass
class FitnessTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def best_fitness(self) -> list[float]:
        return [e.best_fitness for e in self.entries]

    @property
    def evaluations(self) -> int:
        return self.entries[-1].evaluations if self.entries else 0

    def write_csv(self, path: str | Path, with_timing: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "evaluations", "best_fitness", "elapsed_ms"])
            for e in self.entries:
                w.writerow([e.generation, e.evaluations, repr(e.best_fitness),
                            f"{e.elapsed_ms:.3f}" if with_timing else ""])


# refill streams start here so they never collide with crossover slots
_REFILL_SLOT = 1 << 20


class _BudgetExhausted(Exception):
    pass


class _Evaluator:
    """Caches fitness by arrangement and counts unique evaluations."""

    def __init__(self, fitness, budget: int | None):
        self.fitness = fitness
        self.budget = budget
        self.cache: dict[tuple[int, ...], float] = {}
        self.best: tuple[float, tuple[int, ...]] | None = None

    def _better(self, f: float, a: tuple[int, ...]) -> bool:
        if self.best is None:
            return True
        bf, ba = self.best
        return f > bf or (f == bf and a < ba)

    def many(self, arrangements: Sequence[tuple[int, ...]]) -> list[float]:
        fresh = list(dict.fromkeys(a for a in arrangements if a not in self.cache))
        exhausted = False
        if self.budget is not None and len(self.cache) + len(fresh) > self.budget:
            fresh = fresh[: max(0, self.budget - len(self.cache))]
            exhausted = True
        if fresh:
            if isinstance(self.fitness, BatchFitness):
                values = np.asarray(self.fitness.batch(np.asarray(fresh)), dtype=np.float64)
            else:
                values = np.asarray([self.fitness(Arrangement(a)) for a in fresh], dtype=np.float64)
            for a, f in zip(fresh, values):
                if not math.isfinite(f):
                    raise FitnessError(f"fitness returned {f} for arrangement {list(a)}")
                f = float(f)
                self.cache[a] = f
                if self._better(f, a):
                    self.best = (f, a)
        if exhausted:
            raise _BudgetExhausted
        return [self.cache[a] for a in arrangements]

    @property
    def count(self) -> int:
        return len(self.cache)


def _segment_children(pa: Sequence[int], pb: Sequence[int], lo: int, hi: int):
    """Exchange genes in slots [lo, hi) and repair duplicates from the receiving parent."""

    def child(base, donor):
        k = len(base)
        out = list(base)
        out[lo:hi] = donor[lo:hi]
        seg = set(donor[lo:hi])
        outside = [s for s in range(k) if not lo <= s < hi]
        kept = {base[s] for s in outside if base[s] not in seg}
        spare = iter(g for g in base if g not in seg and g not in kept)
        for s in outside:
            if base[s] in seg:
                out[s] = next(spare)
        return tuple(out)

    return child(pa, pb), child(pb, pa)


def _random_segment(k: int, rng: np.random.Generator) -> tuple[int, int]:
    lo, hi = sorted(rng.choice(k + 1, size=2, replace=False).tolist())
    return lo, hi


def crossover(parent_a, parent_b, rng: np.random.Generator, fitness=None,
              segment: tuple[int, int] | None = None) -> Arrangement:
    """One-segment exchange with duplicate repair.

    Without ``fitness`` the child built on ``parent_a`` is returned; with it, the
    fitter of the two symmetric children (ties go to the ``parent_a`` child).
    """
    pa, pb = tuple(parent_a), tuple(parent_b)
    if len(pa) != len(pb):
        raise ValueError(f"parents differ in length: {len(pa)} vs {len(pb)}")
    lo, hi = segment if segment is not None else _random_segment(len(pa), rng)
    ca, cb = _segment_children(pa, pb, lo, hi)
    if fitness is None:
        return Arrangement(ca)
    if isinstance(fitness, BatchFitness):
        fa, fb = fitness.batch(np.asarray([ca, cb]))
    else:
        fa, fb = fitness(Arrangement(ca)), fitness(Arrangement(cb))
    return Arrangement(cb if fb > fa else ca)


def mutate(ind, rate: float, rng: np.random.Generator) -> Arrangement:
    """With probability ``rate`` swap the genes in two distinct random slots."""
    genes = list(ind)
    if len(genes) >= 2 and rng.random() < rate:
        i, j = rng.choice(len(genes), size=2, replace=False)
        genes[i], genes[j] = genes[j], genes[i]
    return Arrangement(genes)


def select_top_m(population: Sequence, fitnesses: Sequence[float], m: int) -> list[int]:
    """Indices of the ``m`` fittest distinct individuals (ties: lexicographic order)."""
    if m > len(population):
        raise ValueError(f"cannot select {m} from a population of {len(population)}")
    if len(fitnesses) != len(population):
        raise ValueError("population and fitnesses differ in length")
    order = sorted(range(len(population)), key=lambda i: (-fitnesses[i], tuple(population[i])))
    seen: set[tuple[int, ...]] = set()
    out = []
    for i in order:
        key = tuple(population[i])
        if key in seen:
            continue
        seen.add(key)
        out.append(i)
        if len(out) == m:
            break
    return out


def _check_k(k: int) -> GridSpec:
    grid = GridSpec.from_k(k)
    if grid.n < 2:
        raise ValueError("need at least a 2x2 grid")
    return grid


def _as_fitness(fitness, ids, store):
    if isinstance(fitness, PredictorParams):
        return PredictorFitness(fitness, ids, store)
    return fitness


def _fill_random(pop: list[tuple[int, ...]], seen: set, target: int, k: int,
                 seed: int, gen: int, start_slot: int) -> None:
    total = math.factorial(k)
    slot = start_slot
    while len(pop) < target and len(seen) < total:
        cand = tuple(np.random.default_rng([seed, gen, slot]).permutation(k).tolist())
        slot += 1
        if cand not in seen:
            seen.add(cand)
            pop.append(cand)


def lcp_optimize(ids: Sequence[str], store: FeatureStore | None, fitness, cfg: GaConfig,
                 on_generation: Callable[[int, list[Arrangement], list[float]], None] | None = None,
                 ) -> tuple[Arrangement, FitnessTrace]:
    """Genetic search over arrangements of ``ids``.

    Each generation keeps the top ``elites`` distinct arrangements, adds
    ``crossover_rate * population`` crossover children (each the fitter of two
    symmetric children, then mutated with probability ``mutation_rate``) and
    refills with fresh random arrangements. The run stops after
    ``max_generations``, after ``saturation`` generations without improvement,
    when ``max_evaluations`` unique evaluations are spent, or once every
    arrangement has been evaluated.
    """
    k = len(ids)
    _check_k(k)
    fitness = _as_fitness(fitness, ids, store)
    ev = _Evaluator(fitness, cfg.max_evaluations)
    trace = FitnessTrace()
    t0 = time.perf_counter()
    total = math.factorial(k)

    def record(gen: int) -> None:
        bf, ba = ev.best
        trace.entries.append(TraceEntry(gen, ev.count, bf, Arrangement(ba),
                                        1000 * (time.perf_counter() - t0)))

    pop: list[tuple[int, ...]] = []
    _fill_random(pop, set(), cfg.population, k, cfg.seed, 0, 0)
    try:
        fits = ev.many(pop)
    except _BudgetExhausted:
        record(0)
        return Arrangement(ev.best[1]), trace
    if on_generation:
        on_generation(0, [Arrangement(p) for p in pop], fits)
    record(0)

    stagnant = 0
    gen = 0
    while gen < cfg.max_generations:
        if cfg.saturation is not None and stagnant >= cfg.saturation:
            break
        if ev.count >= total:
            break
        gen += 1
        prev_best = ev.best[0]
        elite_idx = select_top_m(pop, fits, min(cfg.elites, len(pop)))
        elites = [pop[i] for i in elite_idx]
        new = list(elites)
        seen = set(new)
        n_children = min(round(cfg.crossover_rate * cfg.population), cfg.population - len(new))
        try:
            pairs = []
            for slot in range(n_children):
                srng = np.random.default_rng([cfg.seed, gen, slot])
                if len(elites) >= 2:
                    i, j = srng.choice(len(elites), size=2, replace=False)
                else:
                    i = j = 0
                lo, hi = _random_segment(k, srng)
                pairs.append((srng, _segment_children(elites[i], elites[j], lo, hi)))
            flat = [c for _, cc in pairs for c in cc]
            cfit = ev.many(flat)
            for s, (srng, (ca, cb)) in enumerate(pairs):
                fa, fb = cfit[2 * s], cfit[2 * s + 1]
                child = tuple(mutate(cb if fb > fa else ca, cfg.mutation_rate, srng))
                tries = 0
                while child in seen and tries < 4 and len(seen) < total:
                    child = tuple(mutate(child, 1.0, srng))
                    tries += 1
                if child not in seen:
                    seen.add(child)
                    new.append(child)
            _fill_random(new, seen, cfg.population, k, cfg.seed, gen, _REFILL_SLOT)
            fits = ev.many(new)
        except _BudgetExhausted:
            record(gen)
            break
        pop = new
        if on_generation:
            on_generation(gen, [Arrangement(p) for p in pop], fits)
        stagnant = 0 if ev.best[0] > prev_best else stagnant + 1
        record(gen)
    return Arrangement(ev.best[1]), trace


def brute_force(ids: Sequence[str], store: FeatureStore | None, fitness, budget: int,
                rng: np.random.Generator | int = 0, chunk: int = 100) -> tuple[Arrangement, FitnessTrace]:
    """Exhaustive search when ``K! <= budget``, else ``budget`` distinct uniform samples."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    k = len(ids)
    _check_k(k)
    fitness = _as_fitness(fitness, ids, store)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ev = _Evaluator(fitness, None)
    trace = FitnessTrace()
    t0 = time.perf_counter()
    if math.factorial(k) <= budget:
        candidates = list(itertools.permutations(range(k)))
    else:
        seen: dict[tuple[int, ...], None] = {}
        while len(seen) < budget:
            seen.setdefault(tuple(rng.permutation(k).tolist()))
        candidates = list(seen)
    for step, start in enumerate(range(0, len(candidates), chunk)):
        ev.many(candidates[start:start + chunk])
        bf, ba = ev.best
        trace.entries.append(TraceEntry(step, ev.count, bf, Arrangement(ba),
                                        1000 * (time.perf_counter() - t0)))
    return Arrangement(ev.best[1]), trace

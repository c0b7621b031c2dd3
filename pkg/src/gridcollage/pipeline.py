"""Synthetic end-to-end experiment: simulate labels, fit the surrogate, search.

Images are synthetic: each has a class and a difficulty, and its feature
vector is the class centroid plus a difficulty direction plus noise. Groups
draw their images from a handful of classes so that arrangement (which images
end up next to each other) matters to the simulator.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import CellInfo, CollageSpec, GenPlan, PredictionRecord, generate_groups
from .features import FeatureStore, synth_features
from .grid import Arrangement, CollageGraph, GridSpec, adjacency_from_arrangement
from .predictor import LabeledCollage, PredictorConfig, PredictorParams
from .search import GaConfig, PredictorFitness, lcp_optimize
from .training import TrainConfig, evaluate_mse, split_indices, train, _Packed
from .vlm.base import SimulatedRecognizer, evaluate
from .vlm.labels import normalize_label
from .vlm.simulator import DEFAULT_A_POS, SimConfig, simulate_recognition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldConfig:
    """How synthetic images, classes and difficulties are drawn."""

    n: int = 3
    n_classes: int = 12
    classes_per_group: tuple[int, int] = (2, 3)
    feat_dim: int = 32
    noise_sigma: float = 0.05
    difficulty_spread: float = 0.15
    difficulty_scale: float = 1.0
    seed: int = 0

    @property
    def k(self) -> int:
        return self.n * self.n

    def categories(self) -> list[str]:
        return [f"class {c:03d}" for c in range(self.n_classes)]


@dataclass
class World:
    pool: list[tuple[str, int, str]]
    difficulty: dict[str, float]
    store: FeatureStore
    categories: list[str]
    k: int

    def group(self, g: int) -> list[tuple[str, int, str]]:
        return self.pool[g * self.k:(g + 1) * self.k]

    @property
    def n_groups(self) -> int:
        return len(self.pool) // self.k


def make_world(cfg: WorldConfig, n_groups: int, tag: int = 0) -> World:
    """``n_groups`` groups of ``k`` images. ``tag`` separates disjoint worlds."""
    rng = np.random.default_rng([cfg.seed, 0x3017, tag])
    cats = cfg.categories()
    lo, hi = cfg.classes_per_group
    pool, classes, diff = [], [], {}
    for g in range(n_groups):
        m = int(rng.integers(lo, hi + 1))
        chosen = rng.choice(cfg.n_classes, size=m, replace=False)
        members = np.concatenate([chosen, rng.choice(chosen, size=cfg.k - m)])
        rng.shuffle(members)
        level = rng.random()
        for j, c in enumerate(members.tolist()):
            image = f"t{tag}_g{g:05d}_{j}"
            pool.append((image, int(c), cats[c]))
            classes.append(int(c))
            diff[image] = float(np.clip(level + cfg.difficulty_spread * rng.standard_normal(), 0.0, 1.0))
    ids = [p[0] for p in pool]
    base = synth_features(classes, dim=cfg.feat_dim, noise_sigma=cfg.noise_sigma,
                          seed=cfg.seed * 1000 + tag, image_ids=ids)
    u = np.random.default_rng([cfg.seed, 0xD1FF]).standard_normal(cfg.feat_dim)
    u /= np.linalg.norm(u)
    d = np.array([diff[i] for i in ids])
    store = FeatureStore(ids, base.matrix + cfg.difficulty_scale * d[:, None] * u[None, :])
    return World(pool, diff, store, cats, cfg.k)


def experiment_sim(n: int = 3, **kw) -> SimConfig:
    """Position-biased simulator used by the synthetic experiment.

    The default position profile is lifted so that the difficulty penalty has
    room to act before clamping.
    """
    params = dict(delta_c=0.2, delta_s=0.05, p_loc=0.05, beta=0.5)
    params.update(kw)
    lift = params.pop("lift", 0.45)
    a_pos = tuple(min(1.0, a + lift) for a in DEFAULT_A_POS[n])
    return SimConfig(a_pos, **params)


def label_world(world: World, sim: SimConfig, shuffles: int, seed: int = 0) -> tuple[list[CollageSpec], list[PredictionRecord]]:
    """Random-arrangement collages of every group, labelled by the simulator."""
    plan = GenPlan(world.k, world.n_groups, shuffles, seed)
    specs = generate_groups(world.pool, plan)
    sim = replace(sim, difficulty=world.difficulty)
    ori = {s.collage_name: [e[0] for e in world.group(i // shuffles)] for i, s in enumerate(specs)}
    records = evaluate(SimulatedRecognizer(specs, sim), specs, world.categories, ori_for=ori)
    return specs, records


def to_dataset(records: Sequence[PredictionRecord], store: FeatureStore) -> list[LabeledCollage]:
    out = []
    for r in records:
        grid = GridSpec.from_k(r.k)
        adj = adjacency_from_arrangement(r.arrangement, grid)
        graph = CollageGraph(adj, store.matrix_for(r.ori), tuple(r.ori))
        out.append(LabeledCollage(graph, sum(r.pred) / r.k))
    return out


def _spec_for(world: World, g: int) -> CollageSpec:
    cells = {j: CellInfo(img, cls, label, j) for j, (img, cls, label) in enumerate(world.group(g))}
    return CollageSpec(f"{g:010x}.jpeg", cells)


def simulated_accuracy(world: World, g: int, arrangement: Arrangement, sim: SimConfig,
                       stream: tuple[int, ...]) -> float:
    """Fraction of cells the simulator gets right for group ``g`` placed by ``arrangement``."""
    spec = _spec_for(world, g)
    sim = replace(sim, difficulty=world.difficulty)
    rng = np.random.default_rng(list(stream))
    out = simulate_recognition(spec, arrangement, sim, world.categories, rng)
    moved = spec.rearranged(arrangement)
    return float(np.mean([out[i] == normalize_label(moved.cells[i].label) for i in range(spec.k)]))


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train_groups: int = 200
    shuffles: int = 10
    test_groups: int = 200
    seeds: int = 10
    sim: SimConfig | None = None
    predictor: PredictorConfig = field(default_factory=lambda: PredictorConfig(
        feat_dim=32, hidden_dim=64, conv_layers=3, pool_ratio=0.5, mlp_dims=(128, 32, 16)))
    training: TrainConfig = field(default_factory=lambda: TrainConfig(
        batch_size=64, learning_rate=3e-3, epochs=300, patience=20, seed=0))
    ga: GaConfig = field(default_factory=lambda: GaConfig.for_grid(3))


@dataclass
class ExperimentResult:
    params: PredictorParams
    val_mse: float
    constant_mse: float
    history: list
    optimized: np.ndarray  # (seeds, groups)
    random: np.ndarray
    n_labelled: int
    seconds: float

    @property
    def skill(self) -> float:
        return 1.0 - self.val_mse / self.constant_mse

    @property
    def gain_pp(self) -> float:
        return 100.0 * (self.optimized.mean() - self.random.mean())

    def summary(self) -> dict:
        return {
            "labelled_collages": self.n_labelled,
            "val_mse": self.val_mse,
            "constant_mean_mse": self.constant_mse,
            "skill": self.skill,
            "optimized_accuracy": float(self.optimized.mean()),
            "random_accuracy": float(self.random.mean()),
            "gain_pp": self.gain_pp,
            "per_seed_gain_pp": (100 * (self.optimized.mean(1) - self.random.mean(1))).tolist(),
            "seconds": self.seconds,
        }


def constant_mean_mse(dataset: Sequence[LabeledCollage], tcfg: TrainConfig) -> float:
    """Validation MSE of predicting the training-split mean label."""
    tr, va = split_indices(len(dataset), tcfg)
    y = np.array([s.y for s in dataset])
    return float(np.mean((y[va] - y[tr].mean()) ** 2))


def run_experiment(cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    t0 = time.perf_counter()
    sim = cfg.sim or experiment_sim(cfg.world.n, seed=cfg.world.seed)
    train_world = make_world(cfg.world, cfg.train_groups, tag=0)
    _, records = label_world(train_world, sim, cfg.shuffles, seed=cfg.world.seed)
    dataset = to_dataset(records, train_world.store)
    params, history = train(dataset, cfg.predictor, cfg.training)
    _, va = split_indices(len(dataset), cfg.training)
    val_mse = evaluate_mse(params, _Packed(dataset).subset(va))
    base_mse = constant_mean_mse(dataset, cfg.training)
    log.info("trained on %d collages: val mse %.5f vs constant %.5f", len(dataset), val_mse, base_mse)

    test_world = make_world(cfg.world, cfg.test_groups, tag=1)
    opt = np.zeros((cfg.seeds, cfg.test_groups))
    rnd = np.zeros_like(opt)
    k = cfg.world.k
    for s in range(cfg.seeds):
        for g in range(cfg.test_groups):
            ids = [e[0] for e in test_world.group(g)]
            fit = PredictorFitness(params, ids, test_world.store)
            best, _ = lcp_optimize(ids, None, fit, replace(cfg.ga, seed=1000 * s + g))
            rand = Arrangement(np.random.default_rng([s, g, 0xA11]).permutation(k))
            sim_s = replace(sim, seed=s)
            opt[s, g] = simulated_accuracy(test_world, g, best, sim_s, (s, g, 1))
            rnd[s, g] = simulated_accuracy(test_world, g, rand, sim_s, (s, g, 2))
        log.info("seed %d: optimized %.4f random %.4f", s, opt[s].mean(), rnd[s].mean())
    return ExperimentResult(params, val_mse, base_mse, history, opt, rnd, len(dataset),
                            time.perf_counter() - t0)

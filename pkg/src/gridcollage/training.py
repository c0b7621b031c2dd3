"""Fitting the surrogate: Adam on minibatch MSE with best-validation checkpointing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .predictor import (
    GraphStack,
    LabeledCollage,
    PredictorConfig,
    PredictorParams,
    init_params,
    predict_stack,
    stack_graphs,
    stack_loss_and_grad,
)

log = logging.getLogger(__name__)


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    patience: int | None = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise TrainConfigError("learning_rate must be > 0")
        if not 0 < self.val_fraction < 1:
            raise TrainConfigError("val_fraction must be in (0, 1)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float


class Adam:
    def __init__(self, params: PredictorParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: PredictorParams, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name in params.names():
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            params.tensors[name] -= c.learning_rate * (self.m[name] / bc1) / (
                np.sqrt(self.v[name] / bc2) + c.eps
            )


class _Packed:
    """Dataset pre-stacked by node count, addressable by global sample index."""

    def __init__(self, dataset: Sequence[LabeledCollage]):
        self.n = len(dataset)
        self.stacks = stack_graphs([s.graph for s in dataset], [s.y for s in dataset])
        self.where = np.empty((self.n, 2), dtype=np.int64)
        self.keys = sorted(self.stacks)
        for key_pos, key in enumerate(self.keys):
            positions, _ = self.stacks[key]
            self.where[positions, 0] = key_pos
            self.where[positions, 1] = np.arange(len(positions))

    def subset(self, idx: np.ndarray) -> list[tuple[np.ndarray, GraphStack]]:
        out = []
        for key_pos, key in enumerate(self.keys):
            sel = idx[self.where[idx, 0] == key_pos]
            if len(sel):
                out.append((sel, self.stacks[key][1].take(self.where[sel, 1])))
        return out


def evaluate_mse(params: PredictorParams, parts: list[tuple[np.ndarray, GraphStack]]) -> float:
    sse, n = 0.0, 0
    for _, st in parts:
        err = predict_stack(params, st) - st.y
        sse += float(err @ err)
        n += len(st)
    return sse / n


def split_indices(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    n_val = math.ceil(n * cfg.val_fraction)
    if n_val < 1 or n - n_val < 1:
        raise TrainConfigError(f"cannot split {n} samples into train/val at {cfg.val_fraction}")
    perm = np.random.default_rng([cfg.seed, 0x5B17]).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(
    dataset: Sequence[LabeledCollage],
    pcfg: PredictorConfig,
    tcfg: TrainConfig = TrainConfig(),
    init: PredictorParams | None = None,
) -> tuple[PredictorParams, list[EpochRecord]]:
    """Fit the surrogate and return the parameters with the lowest validation MSE."""
    if len(dataset) < 2:
        raise TrainConfigError("need at least 2 labelled collages")
    packed = _Packed(dataset)
    train_idx, val_idx = split_indices(len(dataset), tcfg)
    val_parts = packed.subset(val_idx)

    params = init.copy() if init is not None else init_params(pcfg, seed=tcfg.seed)
    opt = Adam(params, tcfg)
    shuffle_rng = np.random.default_rng([tcfg.seed, 0x5F1E])
    best = params.copy()
    best_val = evaluate_mse(params, val_parts)
    since_best = 0
    history: list[EpochRecord] = []
    for epoch in range(1, tcfg.epochs + 1):
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        sse = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            mse, grads = stack_loss_and_grad(params, packed.subset(batch), len(batch))
            sse += mse * len(batch)
            opt.step(params, grads)
        val = evaluate_mse(params, val_parts)
        history.append(EpochRecord(epoch, sse / len(order), val))
        if val < best_val:
            best_val, best, since_best = val, params.copy(), 0
        else:
            since_best += 1
        if epoch % 25 == 0:
            log.debug("epoch %d train %.5f val %.5f", epoch, sse / len(order), val)
        if tcfg.patience is not None and since_best >= tcfg.patience:
            log.info("early stop at epoch %d (best val %.5f)", epoch, best_val)
            break
    return best, history


def write_history(history: Sequence[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_mse), repr(rec.val_mse)])

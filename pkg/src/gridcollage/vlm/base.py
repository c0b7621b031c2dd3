"""The recognizer interface and the evaluation loop built on it."""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from ..dataset import CollageSpec, PredictionRecord
from .labels import match_label, normalize_label
from .simulator import SimConfig, collage_stream, simulate_recognition


@dataclass(frozen=True)
class CollageRequest:
    name: str
    k: int
    image: bytes | None = None


@dataclass
class Recognition:
    """Labels per cell (None when missing or unusable) plus an optional error."""

    labels: dict[int, str | None]
    error: str | None = None


class Recognizer(abc.ABC):
    batch_size: int = 4

    @abc.abstractmethod
    def recognize(self, batch: Sequence[CollageRequest],
                  categories: Sequence[str]) -> dict[str, Recognition]:
        """One entry per requested collage name; any number of requests."""


class SimulatedRecognizer(Recognizer):
    def __init__(self, specs: Sequence[CollageSpec] | Mapping[str, CollageSpec], sim: SimConfig):
        self.specs = dict(specs) if isinstance(specs, Mapping) else {s.collage_name: s for s in specs}
        self.sim = sim

    def recognize(self, batch, categories):
        out = {}
        for req in batch:
            spec = self.specs.get(req.name)
            if spec is None:
                out[req.name] = Recognition({i: None for i in range(req.k)}, f"unknown collage {req.name}")
                continue
            rng = collage_stream(self.sim.seed, req.name)
            out[req.name] = Recognition(dict(simulate_recognition(spec, None, self.sim, categories, rng)))
        return out


def score(spec: CollageSpec, labels: Mapping[int, str | None], categories: Sequence[str],
          ori: Sequence[str] | None = None) -> PredictionRecord:
    """Correctness flags per cell; ``ord[j]`` is the cell holding ``ori[j]``."""
    truth = [normalize_label(s) for s in spec.labels()]
    pred = []
    for i in range(spec.k):
        got = labels.get(i)
        ok = got is not None and match_label(got, categories) is not None \
            and normalize_label(got) == truth[i]
        pred.append(int(ok))
    ori = list(ori) if ori is not None else spec.images()
    return PredictionRecord(spec.collage_name, tuple(spec.arrangement_for(ori)), tuple(pred), tuple(ori))


def evaluate(recognizer: Recognizer, specs: Sequence[CollageSpec], categories: Sequence[str],
             ori_for: Callable[[CollageSpec], Sequence[str]] | Mapping[str, Sequence[str]] | None = None,
             image_for: Callable[[CollageSpec], bytes] | None = None,
             window: int = 256) -> list[PredictionRecord]:
    """Run ``recognizer`` over ``specs``; records come back in input order.

    Specs are handed over ``window`` at a time so rasters need not all be in
    memory at once; the recognizer does its own request batching.
    """
    size = window
    if size < 1:
        raise ValueError("window must be >= 1")
    records = []
    for start in range(0, len(specs), size):
        chunk = specs[start:start + size]
        batch = [CollageRequest(s.collage_name, s.k, image_for(s) if image_for else None) for s in chunk]
        results = recognizer.recognize(batch, categories)
        for s in chunk:
            res = results.get(s.collage_name)
            labels = res.labels if res is not None else {}
            if isinstance(ori_for, Mapping):
                ori = ori_for.get(s.collage_name)
            else:
                ori = ori_for(s) if ori_for else None
            records.append(score(s, labels, categories, ori))
    return records

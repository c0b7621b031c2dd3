"""Benchmark generation (groups x shuffles) and the collage/prediction documents.

``collage_info`` documents map a collage file name to its cells::

    {"a72bca2a3e.jpeg": {"0": {"image": ..., "synset_id": 866, "label": "tractor", "index": 0}, ...}}

Prediction documents map a collage file name to ``ord`` (cell of each source
image), ``pred`` (per-cell correctness flags) and ``ori`` (source image ids).
"""

from __future__ import annotations

import ast
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .grid import Arrangement, ArrangementError, validate_arrangement

NAME_RE = re.compile(r"^[0-9a-f]{10}\.jpeg$")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CellInfo:
    image: str
    synset_id: int
    label: str
    index: int


@dataclass(frozen=True)
class CollageSpec:
    collage_name: str
    cells: Mapping[int, CellInfo]

    def __post_init__(self):
        if not NAME_RE.match(self.collage_name):
            raise SchemaError(f"bad collage name {self.collage_name!r}")
        k = len(self.cells)
        n = math.isqrt(k)
        if k == 0 or n * n != k:
            raise SchemaError(f"{self.collage_name}: {k} cells do not form a square grid")
        if set(self.cells) != set(range(k)):
            raise SchemaError(f"{self.collage_name}: cell keys {sorted(self.cells)} != 0..{k - 1}")
        for key, cell in self.cells.items():
            if cell.index != key:
                raise SchemaError(f"{self.collage_name}: cell {key} has index {cell.index}")
        object.__setattr__(self, "cells", dict(sorted(self.cells.items())))

    @property
    def k(self) -> int:
        return len(self.cells)

    @property
    def n(self) -> int:
        return math.isqrt(self.k)

    def images(self) -> list[str]:
        """Image ids in cell order."""
        return [self.cells[i].image for i in range(self.k)]

    def labels(self) -> list[str]:
        return [self.cells[i].label for i in range(self.k)]

    def class_ids(self) -> list[int]:
        return [self.cells[i].synset_id for i in range(self.k)]

    def arrangement_for(self, ori: Sequence[str]) -> Arrangement:
        """Arrangement placing ``ori[j]`` where this collage has it."""
        where = {cell.image: i for i, cell in self.cells.items()}
        try:
            return Arrangement([where[img] for img in ori])
        except KeyError as exc:
            raise SchemaError(f"{self.collage_name}: image {exc} not in collage") from None

    def rearranged(self, arrangement: Arrangement, name: str | None = None) -> "CollageSpec":
        """Same images, moved so that the image now at cell j goes to ``arrangement[j]``."""
        validate_arrangement(arrangement, self.k)
        cells = {}
        for j, cell in enumerate(arrangement):
            src = self.cells[j]
            cells[cell] = CellInfo(src.image, src.synset_id, src.label, cell)
        return CollageSpec(name or self.collage_name, cells)


@dataclass(frozen=True)
class PredictionRecord:
    collage_name: str
    ord: tuple[int, ...]
    pred: tuple[int, ...]
    ori: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "ord", tuple(int(x) for x in self.ord))
        object.__setattr__(self, "ori", tuple(self.ori))
        if not (len(self.ord) == len(self.pred) == len(self.ori)):
            raise SchemaError(
                f"{self.collage_name}: ord/pred/ori lengths {len(self.ord)}/{len(self.pred)}/{len(self.ori)}"
            )
        for flag in self.pred:
            if isinstance(flag, bool) or flag not in (0, 1):
                raise SchemaError(f"{self.collage_name}: pred entry {flag!r} is not 0 or 1")
        object.__setattr__(self, "pred", tuple(int(x) for x in self.pred))
        try:
            validate_arrangement(self.ord, len(self.ord))
        except ArrangementError as exc:
            raise SchemaError(f"{self.collage_name}: ord is not a permutation: {exc}") from exc

    @property
    def arrangement(self) -> Arrangement:
        return Arrangement(self.ord)

    @property
    def k(self) -> int:
        return len(self.ord)


@dataclass(frozen=True)
class GenPlan:
    k: int
    groups: int
    shuffles: int
    seed: int = 0

    def __post_init__(self):
        if self.shuffles < 1 or self.groups < 1:
            raise ValueError("groups and shuffles must be >= 1")
        n = math.isqrt(self.k)
        if n * n != self.k or n < 2:
            raise ValueError(f"k={self.k} is not a square >= 4")

    @classmethod
    def published(cls, n: int, seed: int = 0) -> "GenPlan":
        """Dataset sizes used for the 2x2 (25,000 x 5) and 3x3 (11,111 x 10) sets."""
        return {2: cls(4, 25_000, 5, seed), 3: cls(9, 11_111, 10, seed)}[n]


def _draw_name(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        name = rng.bytes(5).hex() + ".jpeg"
        if name not in taken:
            taken.add(name)
            return name


def generate_groups(pool: Sequence[tuple], plan: GenPlan,
                    labels: Mapping[int, str] | None = None) -> list[CollageSpec]:
    """``plan.groups`` consecutive groups of ``k`` pool images, each shuffled ``plan.shuffles`` times.

    Pool entries are ``(image_id, class_id)`` or ``(image_id, class_id, label)``.
    Output is group-major: specs ``[g*p, (g+1)*p)`` belong to group ``g``.
    """
    k, p = plan.k, plan.shuffles
    if len(pool) < plan.groups * k:
        raise ValueError(f"pool of {len(pool)} images cannot fill {plan.groups} groups of {k}")
    rng = np.random.default_rng([plan.seed, 0x6E])
    taken: set[str] = set()
    specs = []
    distinct_limit = math.factorial(k)
    for g in range(plan.groups):
        members = pool[g * k:(g + 1) * k]
        used: set[tuple[int, ...]] = set()
        for _ in range(p):
            arr = tuple(rng.permutation(k).tolist())
            # redraw duplicates while unused arrangements remain
            while arr in used and len(used) < distinct_limit:
                arr = tuple(rng.permutation(k).tolist())
            used.add(arr)
            cells = {}
            for j, entry in enumerate(members):
                image, cls = entry[0], int(entry[1])
                if len(entry) > 2:
                    label = str(entry[2])
                elif labels is not None:
                    label = labels[cls]
                else:
                    label = f"class {cls}"
                cells[arr[j]] = CellInfo(image, cls, label, arr[j])
            specs.append(CollageSpec(_draw_name(rng, taken), cells))
    return specs


def group_of(pool: Sequence[tuple], specs: Sequence[CollageSpec], plan: GenPlan,
             g: int) -> tuple[list[str], list[CollageSpec]]:
    """Source image order and specs of group ``g`` from :func:`generate_groups` output."""
    ori = [entry[0] for entry in pool[g * plan.k:(g + 1) * plan.k]]
    return ori, list(specs[g * plan.shuffles:(g + 1) * plan.shuffles])


# -- documents --------------------------------------------------------------

def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _no_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise SchemaError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _load_document(text: str):
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError:
        pass
    try:
        # printed-dict fragments as shown in dataset listings use single quotes
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise SchemaError(f"malformed document: {exc}") from exc
    for node in ast.walk(tree):
        if isinstance(node, ast.Dict):
            keys = [ast.literal_eval(k) for k in node.keys if k is not None]
            if len(keys) != len(set(keys)):
                raise SchemaError("duplicate key in document")
    try:
        return ast.literal_eval(tree)
    except ValueError as exc:
        raise SchemaError(f"malformed document: {exc}") from exc


def collage_info_to_doc(specs: Sequence[CollageSpec]) -> dict:
    doc = {}
    for spec in specs:
        if spec.collage_name in doc:
            raise SchemaError(f"duplicate collage {spec.collage_name}")
        doc[spec.collage_name] = {
            str(i): {"image": c.image, "synset_id": c.synset_id, "label": c.label, "index": c.index}
            for i, c in spec.cells.items()
        }
    return doc


def collage_info_from_doc(doc) -> list[CollageSpec]:
    if not isinstance(doc, dict):
        raise SchemaError("collage_info document must be an object")
    specs = []
    for name, cells in doc.items():
        if not isinstance(cells, dict):
            raise SchemaError(f"{name}: cells must be an object")
        parsed = {}
        for key, cell in cells.items():
            if not isinstance(key, str) or not key.isdigit():
                raise SchemaError(f"{name}: cell key {key!r} is not a decimal string")
            try:
                parsed[int(key)] = CellInfo(str(cell["image"]), int(cell["synset_id"]),
                                            str(cell["label"]), int(cell["index"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{name}: cell {key}: {exc!r}") from exc
        specs.append(CollageSpec(name, parsed))
    return specs


def write_collage_info(specs: Sequence[CollageSpec], path: str | os.PathLike) -> None:
    _atomic_write_text(Path(path), json.dumps(collage_info_to_doc(specs), indent=1) + "\n")


def parse_collage_info(path: str | os.PathLike) -> list[CollageSpec]:
    return collage_info_from_doc(_load_document(Path(path).read_text(encoding="utf-8")))


def predictions_to_doc(records: Sequence[PredictionRecord]) -> dict:
    doc = {}
    for r in records:
        if r.collage_name in doc:
            raise SchemaError(f"duplicate collage {r.collage_name}")
        doc[r.collage_name] = {"ord": list(r.ord), "pred": list(r.pred), "ori": list(r.ori)}
    return doc


def predictions_from_doc(doc) -> list[PredictionRecord]:
    if not isinstance(doc, dict):
        raise SchemaError("prediction document must be an object")
    out = []
    for name, rec in doc.items():
        try:
            out.append(PredictionRecord(name, rec["ord"], rec["pred"], rec["ori"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{name}: {exc!r}") from exc
    return out


def write_predictions(records: Sequence[PredictionRecord], path: str | os.PathLike) -> None:
    _atomic_write_text(Path(path), json.dumps(predictions_to_doc(records)) + "\n")


def parse_predictions(path: str | os.PathLike) -> list[PredictionRecord]:
    return predictions_from_doc(_load_document(Path(path).read_text(encoding="utf-8")))

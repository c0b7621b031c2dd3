"""Matching free-text labels to the category list and parsing model replies."""

from __future__ import annotations

import ast
import json
import re
import string
from dataclasses import dataclass, field
from typing import Sequence

_WS = re.compile(r"\s+")
_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*(.*?)```", re.S)

MISSING = "missing"
OUT_OF_VOCABULARY = "out_of_vocabulary"


def normalize_label(text: str) -> str:
    return _WS.sub(" ", str(text)).strip().strip(string.punctuation + " ").lower()


def match_label(predicted: str, categories: Sequence[str]) -> int | None:
    """Index of the category equal to ``predicted`` after normalisation, else None."""
    if not categories:
        raise ValueError("categories must be nonempty")
    key = normalize_label(predicted)
    for i, cat in enumerate(categories):
        if normalize_label(cat) == key:
            return i
    return None


@dataclass
class ParsedCollage:
    labels: dict[int, str | None] = field(default_factory=dict)
    raw: dict[int, str] = field(default_factory=dict)
    flags: dict[int, str] = field(default_factory=dict)
    error: str | None = None


class ResponseFormatError(ValueError):
    pass


def extract_json(raw: str):
    """The JSON object in ``raw``, tolerating code fences and surrounding prose."""
    m = _FENCE.search(raw)
    text = m.group(1) if m else raw
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise ResponseFormatError("no JSON object in response")
    body = text[start:end + 1]
    try:
        return json.loads(body)
    except json.JSONDecodeError:
        try:
            return ast.literal_eval(body)
        except (ValueError, SyntaxError) as exc:
            raise ResponseFormatError(f"unparseable response body: {exc}") from exc


def parse_response(raw: str, expected: Sequence[str], k: int,
                   categories: Sequence[str]) -> dict[str, ParsedCollage]:
    """Per-collage, per-cell labels; problems are flagged, never fatal to the batch."""
    out = {name: ParsedCollage() for name in expected}
    try:
        doc = extract_json(raw)
    except ResponseFormatError as exc:
        for p in out.values():
            p.error = str(exc)
            p.labels = {i: None for i in range(k)}
            p.flags = {i: MISSING for i in range(k)}
        return out
    if not isinstance(doc, dict):
        doc = {}
    for name in expected:
        p = out[name]
        cells = doc.get(name)
        if not isinstance(cells, dict):
            p.error = f"collage {name} missing from response"
            cells = {}
        for i in range(k):
            value = cells.get(str(i), cells.get(i))
            if value is None:
                p.labels[i] = None
                p.flags[i] = MISSING
                continue
            p.raw[i] = str(value)
            idx = match_label(str(value), categories)
            if idx is None:
                p.labels[i] = None
                p.flags[i] = OUT_OF_VOCABULARY
            else:
                p.labels[i] = normalize_label(categories[idx])
    return out

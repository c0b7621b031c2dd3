"""Text prompts sent alongside collage images.

The two templates are kept byte-for-byte as used for data collection,
including the "nine images" wording in the 2x2 variant. Each carries two
``([])`` placeholders: collage file names, then candidate categories.
"""

from __future__ import annotations

import json
from typing import Sequence

PLACEHOLDER = "([])"

TEMPLATES = {
    2: (
        'I want you to act as an Image Classifier. I will provide you with few 2x2 grid '
        'collages and a list of optional categories. Your task is to choose the most '
        'relevant category for each of the nine images in the grid. Start with the '
        'top-left image of each grid and proceed left to right, then down each row. '
        'Assign a number index started with 0 for each image in the grid. Provide the '
        'prediction in a dict format for each grid collage, key is the number index, and '
        'value is the most relevant category for each image in the grid. The final '
        'output is also a dictionary. The key is image name of each grid collage, and '
        'the value is the prediction for each grid collage in a dict format. Do not '
        'provide explanations for your choices or any additional information just the '
        'dictionary of predictions in a JSON format. Only output the predictions in one '
        'JSON dictionary. Here is the image([]) and its optional categories([]). You '
        'have to choose strictly among the given categories and do not give any '
        'predictions that are not in the given category.'
    ),
    3: (
        'I want you to act as an Image Classifier. I will provide you with few 3x3 grid '
        'collages and a list of optional categories. Your task is to choose the most '
        'relevant category for each of the nine images in the grid. Start with the '
        'top-left image of each grid and proceed left to right, then down each row. '
        'Assign a number index started with 0 for each image in the grid. Provide the '
        'prediction in a dict format for each grid collage, key is the number index, and '
        'value is the most relevant category for each image in the grid. The final '
        'output is also a dictionary. The key is image name of each grid collage, and '
        'the value is the prediction for each grid collage in a dict format. Do not '
        'provide explanations for your choices or any additional information just the '
        'dictionary of predictions in a JSON format. Only output the predictions in one '
        'JSON dictionary. Here is the image([]) and its optional categories([]). You '
        'have to choose strictly among the given categories and do not give any '
        'predictions that are not in the given category.'
    ),
}


class UnsupportedGridError(ValueError):
    pass


def _render_list(items: Sequence[str]) -> str:
    return "(" + json.dumps(list(items), ensure_ascii=False) + ")"


def build_text_prompt(n: int, collage_names: Sequence[str], categories: Sequence[str]) -> str:
    """Fill the grid-size template with the collage names and category list."""
    try:
        template = TEMPLATES[n]
    except KeyError:
        raise UnsupportedGridError(f"no prompt template for a {n}x{n} grid") from None
    if not categories:
        raise ValueError("categories must be nonempty")
    head, mid, tail = template.split(PLACEHOLDER)
    return head + _render_list(collage_names) + mid + _render_list(categories) + tail

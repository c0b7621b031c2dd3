"""Token-based request pricing.

With one low-detail image per request the price of a request does not depend
on how many images were collaged into it; what changes with the grid size is
how many images the request covers.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..metrics import CostModel

# tokens in the category list, per evaluation dataset (GPT-4 tokenizer)
LABEL_TOKENS = {
    "ImageNet-1K": 4834,
    "Caltech101": 428,
    "OxfordPets": 203,
    "StanfordCars": 1814,
    "Flowers102": 562,
    "Food101": 513,
    "Aircraft": 565,
    "SUN397": 1859,
    "DTD": 211,
    "EuroSAT": 49,
    "UCF101": 526,
}

LOW_DETAIL_IMAGE_TOKENS = 85
# instruction text + message framing; with the image this makes 296 fixed tokens
PROMPT_TOKENS = 211


@dataclass(frozen=True)
class PriceTable:
    input_per_1k: float = 0.01
    output_per_1k: float = 0.03
    image_tokens: int = LOW_DETAIL_IMAGE_TOKENS

    def __post_init__(self):
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise ValueError("prices must be non-negative")


def estimate_cost(n: int, label_tokens: int, prices: PriceTable = PriceTable(),
                  prompt_tokens: int = PROMPT_TOKENS, output_tokens: int = 0) -> float:
    """Dollars for one request carrying one ``n`` x ``n`` collage."""
    if n < 1:
        raise ValueError("grid side must be >= 1")
    input_tokens = prompt_tokens + label_tokens + prices.image_tokens
    return (prices.input_per_1k * input_tokens + prices.output_per_1k * output_tokens) / 1000.0


def cost_model_for(label_tokens: int, prices: PriceTable = PriceTable(), **kw) -> CostModel:
    return CostModel(cost_per_request=estimate_cost(1, label_tokens, prices, **kw),
                     label_tokens=label_tokens)

"""Recognition backends: a chat-completion client and a seeded simulator."""

from .base import CollageRequest, Recognition, Recognizer, SimulatedRecognizer, evaluate, score
from .client import (ClientConfig, FakeClock, HttpError, HttpRecognizer, QuotaExceededError,
                     TokenBucket, UsageLedger, http_recognize)
from .cost import LABEL_TOKENS, PriceTable, cost_model_for, estimate_cost
from .labels import ParsedCollage, match_label, normalize_label, parse_response
from .simulator import (DEFAULT_A_POS, SimConfig, SimConfigError, cell_probabilities,
                        collage_stream, localization_swaps, simulate_recognition)

__all__ = [
    "CollageRequest", "Recognition", "Recognizer", "SimulatedRecognizer", "evaluate", "score",
    "ClientConfig", "FakeClock", "HttpError", "HttpRecognizer", "QuotaExceededError",
    "TokenBucket", "UsageLedger", "http_recognize",
    "LABEL_TOKENS", "PriceTable", "cost_model_for", "estimate_cost",
    "ParsedCollage", "match_label", "normalize_label", "parse_response",
    "DEFAULT_A_POS", "SimConfig", "SimConfigError", "cell_probabilities",
    "collage_stream", "localization_swaps", "simulate_recognition",
]

from bfmd.metrics.core import (
    METRICS_VERSION,
    EvalPair,
    bleu,
    cider,
    lcs_length,
    meteor_components,
    meteor_lite,
    rouge_l,
)
from bfmd.metrics.report import COLUMNS, MetricReport, evaluate_corpus, pairs_from_text

__all__ = [
    "COLUMNS",
    "METRICS_VERSION",
    "EvalPair",
    "MetricReport",
    "bleu",
    "cider",
    "evaluate_corpus",
    "lcs_length",
    "meteor_components",
    "meteor_lite",
    "pairs_from_text",
    "rouge_l",
]

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

from bfmd.metrics.core import METRICS_VERSION, EvalPair, bleu, cider, meteor_lite, rouge_l
from bfmd.pipeline.vocab import split_words

COLUMNS = ("bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider")


@dataclass(frozen=True)
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        header = "  ".join(f"{c:>8}" for c in COLUMNS)
        row = "  ".join(f"{getattr(self, c):>8.4f}" for c in COLUMNS)
        return f"{header}\n{row}\n(meteor = METEOR-lite, exact+stem; {METRICS_VERSION})"


def evaluate_corpus(pairs: Sequence[EvalPair]) -> MetricReport:
    pairs = list(pairs)
    return MetricReport(
        bleu1=bleu(pairs, 1),
        bleu2=bleu(pairs, 2),
        bleu3=bleu(pairs, 3),
        bleu4=bleu(pairs, 4),
        meteor=meteor_lite(pairs),
        rouge_l=rouge_l(pairs),
        cider=cider(pairs),
    )


def pairs_from_text(candidates: Sequence[str], references: Sequence[str | Sequence[str]]) -> list[EvalPair]:
    """Tokenize raw captions with the pipeline tokenizer (no BOS/EOS)."""
    out = []
    for cand, refs in zip(candidates, references):
        refs = [refs] if isinstance(refs, str) else list(refs)
        out.append(EvalPair.of(split_words(cand), [split_words(r) for r in refs]))
    return out

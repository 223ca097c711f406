"""Corpus-level caption metrics over pre-tokenized text.

BLEU-1..4 (corpus counts, closest-reference brevity penalty), ROUGE-L
(LCS F-measure, beta = 1.2), plain CIDEr (TF-IDF n-gram cosine, n = 1..4,
x10) and METEOR-lite (exact + stem unigram alignment, no synonym stage).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from bfmd.errors import CorpusTooSmall, EmptyCorpus

BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
STEM_SUFFIXES = ("ingly", "edly", "ing", "ied", "ies", "ed", "es", "ly", "er", "s")
METRICS_VERSION = "bfmd-metrics/1: bleu=corpus+closest-bp+eps1e-9; rouge_l=beta1.2; cider=plain-x10; meteor=lite(exact+stem)"


@dataclass(frozen=True)
class EvalPair:
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError("EvalPair needs at least one reference")

    @classmethod
    def of(cls, candidate: Sequence[str], references: Sequence[Sequence[str]]) -> "EvalPair":
        return cls(tuple(candidate), tuple(tuple(r) for r in references))


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check(corpus) -> list[EvalPair]:
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("metric needs at least one pair")
    return corpus


def _closest_ref_len(c: int, refs) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def bleu(corpus: Sequence[EvalPair], n: int = 4) -> float:
    if n not in (1, 2, 3, 4):
        raise ValueError("BLEU order must be 1..4")
    corpus = _check(corpus)
    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for pair in corpus:
        cand_len += len(pair.candidate)
        ref_len += _closest_ref_len(len(pair.candidate), pair.references)
        for k in range(1, n + 1):
            cand = ngrams(pair.candidate, k)
            max_ref: Counter = Counter()
            for r in pair.references:
                max_ref |= ngrams(r, k)
            matched[k - 1] += sum(min(c, max_ref[g]) for g, c in cand.items())
            total[k - 1] += max(len(pair.candidate) - k + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, total):
        p = m / t if m > 0 else BLEU_EPSILON / max(t, 1)
        log_p += math.log(p) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(pair: EvalPair, beta: float = ROUGE_BETA) -> float:
    precs, recs = [], []
    for r in pair.references:
        lcs = lcs_length(pair.candidate, r)
        precs.append(lcs / len(pair.candidate) if pair.candidate else 0.0)
        recs.append(lcs / len(r) if r else 0.0)
    p, r = max(precs), max(recs)
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l(corpus: Sequence[EvalPair]) -> float:
    corpus = _check(corpus)
    return sum(rouge_l_pair(p) for p in corpus) / len(corpus)


def cider(corpus: Sequence[EvalPair], max_n: int = 4) -> float:
    corpus = _check(corpus)
    if len(corpus) < 2:
        raise CorpusTooSmall("CIDEr needs at least two pairs for document frequencies")
    log_docs = math.log(len(corpus))
    df: list[Counter] = [Counter() for _ in range(max_n)]
    for pair in corpus:
        for k in range(1, max_n + 1):
            seen = set()
            for r in pair.references:
                seen.update(ngrams(r, k))
            df[k - 1].update(seen)

    def vec(tokens, k):
        counts = ngrams(tokens, k)
        return {g: c * (log_docs - math.log(max(1.0, df[k - 1][g]))) for g, c in counts.items()}

    def cos(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)

    scores = []
    for pair in corpus:
        per_n = []
        for k in range(1, max_n + 1):
            c = vec(pair.candidate, k)
            per_n.append(sum(cos(c, vec(r, k)) for r in pair.references) / len(pair.references))
        scores.append(10.0 * sum(per_n) / max_n)
    return sum(scores) / len(scores)


def stem(word: str) -> str:
    for suf in STEM_SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            return word[: -len(suf)]
    return word


def meteor_alignment(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Exact matches first, then stem matches; occurrences pair up in order."""
    used_c: set[int] = set()
    used_r: set[int] = set()
    pairs = []
    for key in (lambda w: w, stem):
        slots: dict[str, list[int]] = {}
        for j, w in enumerate(ref):
            if j not in used_r:
                slots.setdefault(key(w), []).append(j)
        for i, w in enumerate(cand):
            if i in used_c:
                continue
            queue = slots.get(key(w))
            if queue:
                j = queue.pop(0)
                used_c.add(i)
                used_r.add(j)
                pairs.append((i, j))
    return sorted(pairs)


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in sorted(alignment):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_components(cand: Sequence[str], ref: Sequence[str]) -> tuple[int, int, float]:
    """(matches, chunks, score) for one candidate/reference pair."""
    align = meteor_alignment(cand, ref)
    m = len(align)
    if m == 0:
        return 0, 0, 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    chunks = count_chunks(align)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return m, chunks, fmean * (1 - penalty)


def meteor_lite(corpus: Sequence[EvalPair]) -> float:
    corpus = _check(corpus)
    return sum(max(meteor_components(p.candidate, r)[2] for r in p.references) for p in corpus) / len(corpus)

"""Reconstruction quality: token-multiset F1 and corpus BLEU."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def tokens(text: str) -> list[str]:
    return text.split()


def token_f1(reference: str, hypothesis: str) -> float:
    """F1 over whitespace-token multisets; two empty strings score 1."""
    ref, hyp = Counter(tokens(reference)), Counter(tokens(hypothesis))
    if not ref and not hyp:
        return 1.0
    overlap = sum((ref & hyp).values())
    if overlap == 0:
        return 0.0
    p = overlap / sum(hyp.values())
    r = overlap / sum(ref.values())
    return 2 * p * r / (p + r)


def _ngrams(toks: list[str], n: int) -> Counter:
    return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))


def corpus_bleu(pairs: Sequence[tuple[str, str]], max_n: int = 4) -> float:
    """Single-reference corpus BLEU, uniform n-gram weights, no smoothing."""
    matches = [0] * max_n
    totals = [0] * max_n
    ref_len = hyp_len = 0
    for ref, hyp in pairs:
        r, h = tokens(ref), tokens(hyp)
        ref_len += len(r)
        hyp_len += len(h)
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            matches[n - 1] += sum((hc & _ngrams(r, n)).values())
            totals[n - 1] += sum(hc.values())
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def inversion_quality(pairs: Sequence[tuple[str, str]]) -> dict[str, float]:
    """``pairs`` are ``(original, reconstruction)``."""
    if not pairs:
        raise ValueError("no pairs to score")
    f1 = sum(token_f1(x, y) for x, y in pairs) / len(pairs)
    return {"token_f1": f1, "bleu": corpus_bleu(pairs)}

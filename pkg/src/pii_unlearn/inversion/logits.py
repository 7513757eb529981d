"""Final-position log-probability records from the target model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.model import LengthError, LoraAdapter, Parameters, forward
from pii_unlearn.numcore import kernels


@dataclass
class LogitRecord:
    text: str
    logprobs: np.ndarray  # (V_target,) float64, log-softmax of the last position

    def __post_init__(self):
        self.logprobs = np.asarray(self.logprobs, dtype=np.float64)
        if self.logprobs.ndim != 1:
            raise ValueError("logprobs must be a vector")

    def is_normalized(self, tol: float = 1e-5) -> bool:
        lp = self.logprobs
        m = lp.max()
        return abs(m + np.log(np.exp(lp - m).sum())) <= tol


def precompute_logits(
    params: Parameters,
    texts: Sequence[str],
    adapter: LoraAdapter | None = None,
    batch_size: int = 32,
) -> list[LogitRecord]:
    """One record per text, batched over equal-length inputs."""
    seqs = [tokenizer.encode(t, bos=True) for t in texts]
    ctx = params.config.context_length
    for s in seqs:
        if len(s) > ctx:
            raise LengthError(f"text of {len(s)} tokens exceeds context {ctx}")
    out: list[np.ndarray | None] = [None] * len(seqs)
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    for n in sorted(by_len):
        idx = by_len[n]
        for lo in range(0, len(idx), batch_size):
            chunk = idx[lo : lo + batch_size]
            toks = np.stack([seqs[i] for i in chunk])
            last = forward(params, adapter, toks).data[:, -1, :].astype(np.float64)
            lp = kernels.log_softmax_rows(np.ascontiguousarray(last))
            for r, i in enumerate(chunk):
                out[i] = lp[r]
    return [LogitRecord(t, lp) for t, lp in zip(texts, out)]


def stack_logprobs(records: Sequence[LogitRecord]) -> np.ndarray:
    return np.stack([r.logprobs for r in records]) if records else np.zeros((0, 0))

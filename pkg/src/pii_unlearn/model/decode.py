"""Greedy and top-k / nucleus decoding."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.model.transformer import ConfigError, LoraAdapter, Parameters, forward


class DecodeMode(str, Enum):
    GREEDY = "greedy"
    NUCLEUS = "nucleus"


@dataclass(frozen=True)
class DecodeConfig:
    mode: DecodeMode = DecodeMode.GREEDY
    temperature: float = 1.0
    top_k: int = 50
    top_p: float = 1.0
    num_continuations: int = 5
    max_new_tokens: int = 48
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", DecodeMode(self.mode))
        if self.num_continuations < 1 or self.max_new_tokens < 1:
            raise ConfigError("num_continuations and max_new_tokens must be >= 1")
        if self.temperature < 0 or self.top_k < 0 or not 0 < self.top_p <= 1:
            raise ConfigError("invalid sampling parameters")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


def _sample_rows(logits: np.ndarray, cfg: DecodeConfig, rng: np.random.Generator) -> np.ndarray:
    logits = logits.astype(np.float64)
    if cfg.temperature == 0:
        return logits.argmax(axis=1)
    z = logits / cfg.temperature
    if 0 < cfg.top_k < z.shape[1]:
        kth = np.partition(z, -cfg.top_k, axis=1)[:, -cfg.top_k][:, None]
        z = np.where(z < kth, -np.inf, z)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    if cfg.top_p < 1.0:
        order = np.argsort(-p, axis=1, kind="stable")
        sp = np.take_along_axis(p, order, axis=1)
        keep_sorted = np.cumsum(sp, axis=1) - sp < cfg.top_p
        keep = np.zeros_like(keep_sorted)
        np.put_along_axis(keep, order, keep_sorted, axis=1)
        p = np.where(keep, p, 0.0)
        p /= p.sum(axis=1, keepdims=True)
    u = rng.random(p.shape[0])
    idx = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def generate(
    params: Parameters,
    adapter: LoraAdapter | None,
    prefix,
    cfg: DecodeConfig,
) -> list[np.ndarray]:
    """``K`` continuations of exactly ``max_new_tokens`` ids each.

    A continuation that emits EOS is PAD-filled afterwards. Special tokens
    other than EOS are never sampled.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.ndim != 1 or prefix.size == 0:
        raise ValueError("prefix must be a non-empty 1-D id sequence")
    greedy = cfg.mode is DecodeMode.GREEDY
    rows = 1 if greedy else cfg.num_continuations
    rng = np.random.default_rng(cfg.seed)
    ctx = params.config.context_length
    seq = np.tile(prefix, (rows, 1))
    out = np.full((rows, cfg.max_new_tokens), tokenizer.PAD, dtype=np.int64)
    done = np.zeros(rows, dtype=bool)
    banned = [tokenizer.PAD, tokenizer.BOS]
    for step in range(cfg.max_new_tokens):
        window = seq[:, -ctx:]
        logits = forward(params, adapter, window).data[:, -1, :].copy()
        logits[:, banned] = -np.inf
        nxt = logits.argmax(axis=1) if greedy else _sample_rows(logits, cfg, rng)
        nxt = np.where(done, tokenizer.PAD, nxt)
        out[:, step] = nxt
        done |= nxt == tokenizer.EOS
        if done.all():
            break
        seq = np.concatenate([seq, nxt[:, None]], axis=1)
    if greedy:
        return [out[0].copy() for _ in range(cfg.num_continuations)]
    return [row.copy() for row in out]


def continuation_text(ids: np.ndarray) -> str:
    return tokenizer.decode(ids)

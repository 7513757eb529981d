"""Language-model training and the utility heads (perplexity, label accuracy)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from pii_unlearn.model.transformer import ConfigError, LoraAdapter, Parameters, forward
from pii_unlearn.numcore import (
    AdamW,
    OptimConfig,
    Tape,
    Tensor,
    clip_grad_norm,
    cosine_lr,
    cross_entropy_tokenwise,
    weighted_sum,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass
class Batch:
    inputs: np.ndarray  # (B, T)
    targets: np.ndarray  # (B, T)
    valid: np.ndarray  # (B, T) float, 0 on padding
    index: np.ndarray  # rows of the source list
    extra: np.ndarray | None = None  # per-target side channel (e.g. privacy mask)

    @property
    def n_tokens(self) -> int:
        return int(self.valid.sum())


def pad_batch(seqs: Sequence[np.ndarray], index=None, extras: Sequence[np.ndarray] | None = None) -> Batch:
    """Right-pad token sequences into next-token (input, target) pairs.

    ``extras[i]`` is aligned to ``seqs[i][1:]`` (one value per target).
    """
    width = max(len(s) for s in seqs) - 1
    b = len(seqs)
    # padding sits to the right and carries zero weight, so any in-vocab id works
    inputs = np.zeros((b, width), dtype=np.int64)
    targets = np.zeros((b, width), dtype=np.int64)
    valid = np.zeros((b, width), dtype=np.float64)
    extra = np.zeros((b, width), dtype=np.float64) if extras is not None else None
    for r, s in enumerate(seqs):
        n = len(s) - 1
        inputs[r, :n] = s[:-1]
        targets[r, :n] = s[1:]
        valid[r, :n] = 1.0
        if extra is not None:
            extra[r, :n] = extras[r]
    idx = np.arange(b) if index is None else np.asarray(index)
    return Batch(inputs, targets, valid, idx, extra)


def length_grouped_batches(
    seqs: Sequence[np.ndarray],
    batch_size: int,
    rng: np.random.Generator | None,
    extras: Sequence[np.ndarray] | None = None,
    bucket: int = 8,
) -> list[Batch]:
    """Shuffle, then sort inside windows of ``bucket`` batches so padding stays small."""
    order = np.arange(len(seqs)) if rng is None else rng.permutation(len(seqs))
    window = batch_size * bucket
    chunks = []
    for lo in range(0, len(order), window):
        part = order[lo : lo + window]
        part = part[np.argsort([len(seqs[i]) for i in part], kind="stable")]
        for blo in range(0, len(part), batch_size):
            chunks.append(part[blo : blo + batch_size])
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    out = []
    for idx in chunks:
        ex = [extras[i] for i in idx] if extras is not None else None
        out.append(pad_batch([seqs[i] for i in idx], idx, ex))
    return out


def token_losses(params: Parameters, adapter: LoraAdapter | None, batch: Batch, rng=None) -> Tensor:
    """Flat (B*T,) per-token cross-entropy for a padded batch."""
    logits = forward(params, adapter, batch.inputs, rng=rng)
    v = logits.shape[-1]
    return cross_entropy_tokenwise(logits.reshape(-1, v), batch.targets.reshape(-1))


@dataclass
class LMTrainConfig:
    epochs: int = 6
    batch_size: int = 16
    seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)


def train_lm(
    params: Parameters,
    corpus: Sequence[np.ndarray],
    cfg: LMTrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> Parameters:
    """Full-parameter next-token training with AdamW and a cosine schedule.

    Updates ``params`` in place and returns it. ``params.history`` holds the
    mean training CE of each epoch.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    trainable = params.trainable()
    opt = AdamW(trainable, cfg.optim)
    steps_per_epoch = math.ceil(len(corpus) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        tot, cnt = 0.0, 0
        for batch in length_grouped_batches(corpus, cfg.batch_size, rng):
            w = batch.valid.reshape(-1) / batch.n_tokens
            with Tape() as tape:
                ce = token_losses(params, None, batch)
                loss = weighted_sum(ce, w)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError("training loss diverged", epoch)
            tape.backward(loss)
            clip_grad_norm(trainable, cfg.optim.grad_clip)
            opt.step(cosine_lr(step, total, cfg.optim))
            opt.zero_grad()
            step += 1
            tot += value * batch.n_tokens
            cnt += batch.n_tokens
        history.append(tot / cnt)
        log.info("lm epoch %d: mean CE %.4f", epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    params.history = history
    return params


def mean_token_ce(
    params: Parameters,
    adapter: LoraAdapter | None,
    seqs: Sequence[np.ndarray],
    batch_size: int = 32,
) -> float:
    if not seqs:
        raise ValueError("evaluation set is empty")
    tot, cnt = 0.0, 0
    for batch in length_grouped_batches(seqs, batch_size, None):
        ce = token_losses(params, adapter, batch).data.astype(np.float64)
        tot += float((ce * batch.valid.reshape(-1)).sum())
        cnt += batch.n_tokens
    return tot / cnt


def perplexity(params: Parameters, adapter: LoraAdapter | None, eval_set: Sequence[np.ndarray], batch_size: int = 32) -> float:
    return math.exp(mean_token_ce(params, adapter, eval_set, batch_size))


def label_accuracy(
    params: Parameters,
    adapter: LoraAdapter | None,
    eval_set: Sequence[tuple[np.ndarray, str]],
    label_token_map: dict[str, int],
) -> float:
    """Fraction of examples whose best label token (at the final position) is the gold one.

    The argmax runs over the label tokens only.
    """
    if not eval_set:
        raise ValueError("evaluation set is empty")
    labels = sorted(label_token_map)
    ids = np.array([label_token_map[lbl] for lbl in labels])
    if len(set(ids.tolist())) != len(ids):
        raise ConfigError("label tokens must be distinct")
    correct = 0
    for seq, gold in eval_set:
        if gold not in label_token_map:
            raise ConfigError(f"label {gold!r} missing from the label map")
        logits = forward(params, adapter, seq).data[-1]
        correct += labels[int(np.argmax(logits[ids]))] == gold
    return correct / len(eval_set)

"""Adapter-only forgetting runs: masked contrastive (oracle or pseudo data) and GA."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.model import LoraAdapter, Parameters, length_grouped_batches, token_losses
from pii_unlearn.numcore import AdamW, ContractError, OptimConfig, Tape, clip_grad_norm
from pii_unlearn.unlearn.losses import ga_from_token_losses, pscu_from_token_losses

log = logging.getLogger(__name__)


class UnlearnMode(str, Enum):
    PSCU_PSEUDO = "pseudo"
    PSCU_ORACLE = "oracle"
    GA = "ga"


@dataclass
class EarlyStop:
    """Stop when utility degrades past a bound or leakage falls below a target."""

    utility: str = "ppl"  # "ppl" (ratio bound) or "accuracy" (absolute drop bound)
    max_ppl_ratio: float | None = 1.15
    max_acc_drop: float | None = 0.05
    privacy_target: float | None = None  # stop once E-Hit < target
    restore_on_utility_stop: bool = True


@dataclass
class PscuConfig:
    alpha: float = 1.0
    beta: float = 1.0
    eps: float = 1e-8
    lr: float = 1e-4
    epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    seed: int = 0
    eval_every: int | None = None  # optimiser steps between checks; None = once per epoch
    early_stop: EarlyStop = field(default_factory=EarlyStop)

    def validate(self) -> "PscuConfig":
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid optimisation settings")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be a positive step count")
        return self


@dataclass
class UnlearnSample:
    """Token ids (BOS .. EOS) and a privacy mask aligned to the next-token targets."""

    tokens: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_spans(cls, text: str, spans: Sequence[tuple[int, int]]) -> "UnlearnSample":
        raw = text.encode()
        byte_mask = np.zeros(len(raw), dtype=np.float64)
        for s, e in spans:
            byte_mask[max(0, s) : min(len(raw), e)] = 1.0
        return cls.from_mask(text, byte_mask)

    @classmethod
    def from_mask(cls, text: str, byte_mask) -> "UnlearnSample":
        """``byte_mask`` has one entry per byte of ``text``; EOS is context."""
        byte_mask = np.asarray(byte_mask, dtype=np.float64)
        if byte_mask.shape != (tokenizer.byte_len(text),):
            raise ContractError("mask must have one entry per text byte")
        return cls(tokenizer.encode(text, bos=True, eos=True), np.concatenate([byte_mask, [0.0]]))


@dataclass
class EpochTrace:
    epoch: int
    L_priv: float
    L_gen: float
    J: float
    utility: float | None = None
    err: float | None = None
    frs: float | None = None
    s_exp: float | None = None
    e_hit: float | None = None
    skipped: int = 0
    step: int = 0


@dataclass
class StopDecision:
    stop: bool
    reason: str = "continue"


@dataclass
class UnlearnRun:
    mode: UnlearnMode
    trace: list[EpochTrace]
    adapter: LoraAdapter
    stop_reason: str
    base_checksum_before: str
    base_checksum_after: str
    skipped_batches: int = 0
    baseline: dict = field(default_factory=dict)

    def trace_rows(self) -> list[dict]:
        return [asdict(t) for t in self.trace]

    def save_trace(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.trace_rows():
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return path


def early_stop_check(trace: Sequence[EpochTrace], criterion: EarlyStop, baseline_utility: float | None) -> StopDecision:
    if not trace:
        raise ValueError("trace is empty")
    last = trace[-1]
    u = last.utility
    if u is not None and not math.isfinite(u):
        return StopDecision(True, "nan")
    if last.J is not None and not math.isfinite(last.J):
        return StopDecision(True, "nan")
    if u is not None and baseline_utility is not None:
        if criterion.utility == "ppl" and criterion.max_ppl_ratio is not None:
            if u / baseline_utility > criterion.max_ppl_ratio:
                return StopDecision(True, "utility")
        if criterion.utility == "accuracy" and criterion.max_acc_drop is not None:
            if baseline_utility - u > criterion.max_acc_drop:
                return StopDecision(True, "utility")
    if criterion.privacy_target is not None and last.e_hit is not None and last.e_hit < criterion.privacy_target:
        return StopDecision(True, "privacy")
    return StopDecision(False)


EvalHook = Callable[[LoraAdapter], dict]


def _check_masks(data: Sequence[UnlearnSample]) -> None:
    for s in data:
        if s.mask.shape[0] != s.tokens.shape[0] - 1:
            raise ContractError("mask must have one entry per next-token target")
        body = s.mask[:-1]
        if body.size and body.min() == 1.0:
            raise ContractError("all-sensitive sample: at least one context token is required")


def unlearn_train(
    params: Parameters,
    adapter: LoraAdapter,
    data: Sequence[UnlearnSample],
    cfg: PscuConfig,
    mode: UnlearnMode = UnlearnMode.PSCU_PSEUDO,
    eval_hook: EvalHook | None = None,
) -> UnlearnRun:
    """Optimise only ``adapter``; ``params`` stay frozen throughout.

    ``eval_hook(adapter)`` is called before training, then after each epoch or
    every ``cfg.eval_every`` optimiser steps, and
    may return ``utility``, ``err``, ``frs``, ``s_exp`` and ``e_hit``.
    """
    cfg.validate()
    mode = UnlearnMode(mode)
    if not data:
        raise ValueError("unlearning data is empty")
    if not adapter.factors:
        raise ContractError("no adapter attached")
    _check_masks(data)
    was_frozen = params.frozen
    params.freeze()
    before = params.checksum()
    rng = np.random.default_rng(cfg.seed)
    trainable = adapter.tensors()
    for t in trainable:
        t.requires_grad = True
    opt = AdamW(trainable, OptimConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip, schedule="constant", warmup_frac=0.0))
    seqs = [s.tokens for s in data]
    masks = [s.mask for s in data]
    baseline = eval_hook(adapter) if eval_hook is not None else {}
    base_util = baseline.get("utility")
    trace: list[EpochTrace] = []
    skipped_total = 0
    stop_reason = "budget"
    last_good = adapter.copy()
    step = 0
    sums = {"J": 0.0, "L_priv": 0.0, "L_gen": 0.0}
    n_batches = skipped = 0

    def checkpoint(epoch: int) -> StopDecision:
        # close the running window into a trace row and consult the stop rule
        nonlocal sums, n_batches, skipped, last_good
        k = max(n_batches, 1)
        row = EpochTrace(epoch, sums["L_priv"] / k, sums["L_gen"] / k, sums["J"] / k, skipped=skipped, step=step)
        if eval_hook is not None:
            snap = eval_hook(adapter)
            for key in ("utility", "err", "frs", "s_exp", "e_hit"):
                setattr(row, key, snap.get(key))
        trace.append(row)
        log.info("unlearn[%s] epoch %d step %d: %s", mode.value, epoch, step, row)
        sums = {"J": 0.0, "L_priv": 0.0, "L_gen": 0.0}
        n_batches = skipped = 0
        decision = early_stop_check(trace, cfg.early_stop, base_util)
        if decision.stop:
            if decision.reason in ("utility", "nan") and cfg.early_stop.restore_on_utility_stop:
                _restore(adapter, last_good)
        else:
            last_good = adapter.copy()
        return decision

    try:
        done = False
        for epoch in range(cfg.epochs):
            for batch in length_grouped_batches(seqs, cfg.batch_size, rng, extras=masks):
                m = batch.extra * batch.valid
                ctx = ((1.0 - batch.extra) * batch.valid).sum()
                if ctx == 0:
                    skipped += 1
                    skipped_total += 1
                    continue
                snapshot = adapter.copy()
                with Tape() as tape:
                    ce = token_losses(params, adapter, batch, rng=rng)
                    terms = pscu_from_token_losses(ce, m, cfg.alpha, cfg.beta, cfg.eps, batch.valid)
                    loss = terms.J if mode is not UnlearnMode.GA else ga_from_token_losses(ce, batch.valid)
                vals = terms.values()
                if not math.isfinite(loss.item()):
                    _restore(adapter, snapshot)
                    stop_reason, done = "nan", True
                    break
                tape.backward(loss)
                clip_grad_norm(trainable, cfg.grad_clip)
                opt.step(cfg.lr)
                opt.zero_grad()
                for k in sums:
                    sums[k] += vals[k]
                n_batches += 1
                step += 1
                if cfg.eval_every is not None and step % cfg.eval_every == 0:
                    decision = checkpoint(epoch + 1)
                    if decision.stop:
                        stop_reason, done = decision.reason, True
                        break
            if done:
                break
            if cfg.eval_every is None or n_batches:
                decision = checkpoint(epoch + 1)
                if decision.stop:
                    stop_reason = decision.reason
                    break
    finally:
        after = params.checksum()
        if not was_frozen:
            params.unfreeze()
    if after != before:
        raise AssertionError("base parameters changed during adapter-only training")
    return UnlearnRun(mode, trace, adapter, stop_reason, before, after, skipped_total, baseline)


def _restore(adapter: LoraAdapter, good: LoraAdapter) -> None:
    for name, (a, b) in adapter.factors.items():
        ga, gb = good.factors[name]
        a.data[...] = ga.data
        b.data[...] = gb.data


def pscu_train(params, adapter, data, cfg: PscuConfig, oracle: bool = False, eval_hook=None) -> UnlearnRun:
    """Masked contrastive forgetting; oracle and pseudo runs differ only in ``data``."""
    mode = UnlearnMode.PSCU_ORACLE if oracle else UnlearnMode.PSCU_PSEUDO
    return unlearn_train(params, adapter, data, cfg, mode, eval_hook)


def ga_train(params, adapter, data, cfg: PscuConfig, eval_hook=None) -> UnlearnRun:
    """Full-sequence gradient ascent under the same adapter and budget."""
    return unlearn_train(params, adapter, data, cfg, UnlearnMode.GA, eval_hook)

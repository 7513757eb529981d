"""AdamW and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pii_unlearn.numcore.tensor import Tensor


@dataclass
class OptimConfig:
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    min_lr_frac: float = 0.1
    grad_clip: float = 1.0
    schedule: str = "cosine"  # or "constant"

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


def cosine_lr(step: int, total: int, cfg: OptimConfig) -> float:
    if cfg.schedule == "constant" or total <= 0:
        return cfg.lr
    warm = int(cfg.warmup_frac * total)
    if step < warm:
        return cfg.lr * (step + 1) / warm
    progress = (step - warm) / max(1, total - warm)
    floor = cfg.lr * cfg.min_lr_frac
    return floor + 0.5 * (cfg.lr - floor) * (1.0 + math.cos(math.pi * min(1.0, progress)))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        f = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(f)
    return norm


class AdamW:
    """Decoupled weight decay Adam; updates ``Tensor.data`` in place."""

    def __init__(self, params: Sequence[Tensor], cfg: OptimConfig):
        cfg.validate()
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        if lr == 0.0:
            return
        self.t += 1
        b1, b2 = self.cfg.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.cfg.weight_decay and p.ndim >= 2:
                p.data *= p.dtype.type(1.0 - lr * self.cfg.weight_decay)
            upd = (m / c1) / (np.sqrt(v / c2) + self.cfg.eps)
            p.data -= (lr * upd).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

"""Logit inverter: a byte decoder conditioned on projected soft embeddings.

Each conditioning temperature contributes one virtual token ahead of BOS:
``proj_k(softmax(P_t / tau_k) @ align @ E)`` where ``E`` is the decoder's own
token embedding table. With ``tau = 1`` the weights are exactly ``exp(P_t)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.inversion.align import alignment_map, check_total
from pii_unlearn.inversion.logits import LogitRecord, stack_logprobs
from pii_unlearn.model import (
    ModelConfig,
    Parameters,
    TrainingError,
    forward,
    init_model,
    length_grouped_batches,
    load_checkpoint,
    save_checkpoint,
)
from pii_unlearn.numcore import (
    AdamW,
    OptimConfig,
    Tape,
    Tensor,
    add,
    clip_grad_norm,
    concat,
    cosine_lr,
    cross_entropy_tokenwise,
    kernels,
    linear,
    matmul,
    reshape,
    take_rows,
    weighted_sum,
)

log = logging.getLogger(__name__)


@dataclass
class InverterConfig:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    temperatures: tuple[float, ...] = (1.0,)
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        self.temperatures = tuple(float(t) for t in self.temperatures)

    def validate(self) -> "InverterConfig":
        if self.max_len < 1 or not self.temperatures or min(self.temperatures) <= 0:
            raise ValueError("max_len must be positive and temperatures non-empty and positive")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("invalid inverter optimisation settings")
        return self

    def model_config(self) -> ModelConfig:
        ctx = len(self.temperatures) + 1 + self.max_len
        return ModelConfig(
            d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads, context_length=ctx, seed=self.seed
        ).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["temperatures"] = list(self.temperatures)
        return d


@dataclass
class Inverter:
    config: InverterConfig
    decoder: Parameters
    proj_w: list[Tensor]  # one (d, d) per temperature
    proj_b: list[Tensor]
    alignment: np.ndarray  # (V_target, V_inv)
    history: list[float] = field(default_factory=list)

    @property
    def n_virtual(self) -> int:
        return len(self.config.temperatures)

    def tensors(self) -> list[Tensor]:
        return self.decoder.trainable() + self.proj_w + self.proj_b

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256(self.decoder.checksum().encode())
        for t in self.proj_w + self.proj_b:
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def save(self, path):
        extra = {"alignment": self.alignment}
        for k, (w, b) in enumerate(zip(self.proj_w, self.proj_b)):
            extra[f"proj{k}/w"] = w.data
            extra[f"proj{k}/b"] = b.data
        meta = {"inverter": self.config.to_dict(), "history": self.history}
        return save_checkpoint(path, self.decoder, {}, meta, extra)

    @classmethod
    def load(cls, path) -> "Inverter":
        dec, _, meta, extra = load_checkpoint(path)
        cfg = InverterConfig(**meta["inverter"])
        k = len(cfg.temperatures)
        ws = [Tensor(extra[f"proj{i}/w"]) for i in range(k)]
        bs = [Tensor(extra[f"proj{i}/b"]) for i in range(k)]
        return cls(cfg, dec, ws, bs, extra["alignment"], list(meta.get("history", [])))


def init_inverter(cfg: InverterConfig, target_vocab: Sequence[bytes] | None = None) -> Inverter:
    cfg.validate()
    dec = init_model(cfg.model_config())
    inv_vocab = tokenizer.vocab_surfaces()
    align = alignment_map(list(target_vocab) if target_vocab is not None else inv_vocab, inv_vocab)
    rng = np.random.default_rng(cfg.seed + 1)
    d = cfg.d_model
    # near-identity start keeps the soft embedding's geometry
    ws = [Tensor(np.eye(d, dtype=np.float32) + rng.normal(0, 0.02, (d, d)).astype(np.float32)) for _ in cfg.temperatures]
    bs = [Tensor(np.zeros(d, dtype=np.float32)) for _ in cfg.temperatures]
    return Inverter(cfg, dec, ws, bs, align)


def tempered_weights(logprobs: np.ndarray, tau: float) -> np.ndarray:
    """``softmax(P_t / tau)`` row-wise; ``tau = 1`` returns ``exp(P_t)``."""
    lp = np.atleast_2d(np.asarray(logprobs, dtype=np.float64))
    if tau == 1.0:
        return np.exp(lp)
    return kernels.softmax_rows(np.ascontiguousarray(lp / tau))


def soft_embed(
    logprobs: np.ndarray,
    alignment: np.ndarray,
    embeddings: Tensor,
    proj_w: Tensor,
    proj_b: Tensor | None = None,
    tau: float = 1.0,
) -> Tensor:
    """``(B, d)`` projected expectation of inverter embeddings under ``P_t``."""
    check_total(alignment)
    w = tempered_weights(logprobs, tau) @ alignment
    e = matmul(Tensor(w.astype(embeddings.dtype)), embeddings)
    return linear(e, proj_w, proj_b)


def conditioning(inv: Inverter, logprobs: np.ndarray) -> Tensor:
    """``(B, k, d)`` virtual-token prefix, one slot per temperature."""
    lp = np.atleast_2d(logprobs)
    emb = inv.decoder["tok_emb"]
    slots = [
        reshape(soft_embed(lp, inv.alignment, emb, w, b, tau), (lp.shape[0], 1, inv.config.d_model))
        for w, b, tau in zip(inv.proj_w, inv.proj_b, inv.config.temperatures)
    ]
    return slots[0] if len(slots) == 1 else concat(slots, axis=1)


def _target_seq(text: str, max_len: int) -> np.ndarray:
    ids = tokenizer.encode(text, bos=True, eos=False)[: max_len + 1]
    if len(ids) - 1 < max_len:
        ids = np.append(ids, tokenizer.EOS)
    return ids


def _batch_losses(inv: Inverter, batch, lp: np.ndarray) -> Tensor:
    prefix = conditioning(inv, lp[batch.index])
    logits = forward(inv.decoder, None, batch.inputs, prefix=prefix)
    b, t = batch.inputs.shape
    k = inv.n_virtual
    v = logits.shape[-1]
    rows = (np.arange(b)[:, None] * (k + t) + k + np.arange(t)[None, :]).reshape(-1)
    flat = take_rows(reshape(logits, (b * (k + t), v)), rows)
    return cross_entropy_tokenwise(flat, batch.targets.reshape(-1))


def teacher_forced_ce(inv: Inverter, records: Sequence[LogitRecord], batch_size: int = 64) -> float:
    """Mean per-token CE of reconstructing each record's text."""
    if not records:
        raise ValueError("no records")
    lp = stack_logprobs(records)
    seqs = [_target_seq(r.text, inv.config.max_len) for r in records]
    tot = cnt = 0.0
    for batch in length_grouped_batches(seqs, batch_size, None):
        ce = _batch_losses(inv, batch, lp).data
        tot += float((ce * batch.valid.reshape(-1)).sum())
        cnt += batch.n_tokens
    return tot / cnt


def train_inverter(records: Sequence[LogitRecord], cfg: InverterConfig, inv: Inverter | None = None) -> Inverter:
    """Teacher-forced reconstruction of each text from its log-probabilities."""
    cfg.validate()
    if len({r.text for r in records}) < 2 and not (records and inv is not None):
        raise ValueError("need at least two distinct records")
    inv = inv or init_inverter(cfg)
    lp = stack_logprobs(records)
    if lp.shape[1] != inv.alignment.shape[0]:
        raise ValueError(f"records carry {lp.shape[1]} logits, alignment expects {inv.alignment.shape[0]}")
    seqs = [_target_seq(r.text, cfg.max_len) for r in records]
    rng = np.random.default_rng(cfg.seed)
    params = inv.tensors()
    for t in params:
        t.requires_grad = True
    ocfg = OptimConfig(lr=cfg.lr)
    opt = AdamW(params, ocfg)
    total = math.ceil(len(seqs) / cfg.batch_size) * cfg.epochs
    step = 0
    for epoch in range(cfg.epochs):
        tot = cnt = 0.0
        for batch in length_grouped_batches(seqs, cfg.batch_size, rng):
            w = batch.valid.reshape(-1) / batch.n_tokens
            with Tape() as tape:
                loss = weighted_sum(_batch_losses(inv, batch, lp), w)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError("inverter loss diverged", epoch)
            tape.backward(loss)
            clip_grad_norm(params, ocfg.grad_clip)
            opt.step(cosine_lr(step, total, ocfg))
            opt.zero_grad()
            step += 1
            tot += value * batch.n_tokens
            cnt += batch.n_tokens
        inv.history.append(tot / cnt)
        log.info("inverter epoch %d: CE %.4f", epoch + 1, inv.history[-1])
    for t in params:
        t.requires_grad = False
    return inv


def invert_batch(inv: Inverter, logprobs: np.ndarray, max_len: int | None = None) -> list[str]:
    """Greedy reconstructions for a stack of log-probability vectors."""
    lp = np.atleast_2d(np.asarray(logprobs, dtype=np.float64))
    max_len = min(max_len or inv.config.max_len, inv.config.max_len)
    prefix = conditioning(inv, lp)
    rows = lp.shape[0]
    seq = np.full((rows, 1), tokenizer.BOS, dtype=np.int64)
    done = np.zeros(rows, dtype=bool)
    for _ in range(max_len):
        logits = forward(inv.decoder, None, seq, prefix=prefix).data[:, -1, :].copy()
        logits[:, [tokenizer.PAD, tokenizer.BOS]] = -np.inf
        nxt = np.where(done, tokenizer.PAD, logits.argmax(axis=1))
        done |= nxt == tokenizer.EOS
        seq = np.concatenate([seq, nxt[:, None]], axis=1)
        if done.all():
            break
    return [tokenizer.decode(row[1:]) for row in seq]


def invert(inv: Inverter, logprobs: np.ndarray, max_len: int | None = None, batch_size: int = 64) -> list[str] | str:
    """Greedy reconstruction; a single vector returns a single string."""
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.ndim == 1:
        return invert_batch(inv, lp[None, :], max_len)[0]
    out: list[str] = []
    for lo in range(0, lp.shape[0], batch_size):
        out.extend(invert_batch(inv, lp[lo : lo + batch_size], max_len))
    return out

"""Decoder-only transformer with optional low-rank adapters."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.numcore import (
    Tensor,
    add,
    causal_attention,
    concat,
    embedding,
    gelu,
    layer_norm,
    linear,
)


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = tokenizer.VOCAB_SIZE
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    context_length: int = 128
    seed: int = 0
    mlp_ratio: int = 4

    def validate(self) -> "ModelConfig":
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.mlp_ratio) < 1:
            raise ConfigError("model sizes must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.context_length < 2:
            raise ConfigError("context_length must be at least 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


ATTN_TARGETS = ("attn.q", "attn.k", "attn.v", "attn.o")
MLP_TARGETS = ("mlp.fc", "mlp.proj")


class TargetSelector(str, Enum):
    MLP_ONLY = "mlp"
    ATTENTION_ONLY = "attn"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "TargetSelector":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        for member in cls:
            if v in (member.value, member.name.lower()):
                return member
        raise ConfigError(f"unknown LoRA target selector {value!r}")

    def modules(self) -> tuple[str, ...]:
        if self is TargetSelector.MLP_ONLY:
            return MLP_TARGETS
        if self is TargetSelector.ATTENTION_ONLY:
            return ATTN_TARGETS
        return ATTN_TARGETS + MLP_TARGETS


class Parameters:
    """Named base weights. Linear weights are stored (out, in)."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor], frozen: bool = False):
        self.config = config
        self.tensors = tensors
        self.frozen = False
        if frozen:
            self.freeze()
        else:
            self.unfreeze()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def freeze(self) -> None:
        self.frozen = True
        for t in self.tensors.values():
            t.requires_grad = False

    def unfreeze(self) -> None:
        self.frozen = False
        for t in self.tensors.values():
            t.requires_grad = True

    def trainable(self) -> list[Tensor]:
        return [t for t in self.tensors.values() if t.requires_grad]

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    def astype(self, dtype) -> "Parameters":
        cast = {k: Tensor(v.data.astype(dtype), name=k) for k, v in self.tensors.items()}
        return Parameters(self.config, cast, frozen=self.frozen)

    def copy(self) -> "Parameters":
        return self.astype(self.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name].data)
            h.update(name.encode())
            h.update(str(arr.dtype).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_model(config: ModelConfig, dtype=np.float32) -> Parameters:
    config.validate()
    rng = np.random.default_rng(config.seed)
    d, v, f = config.d_model, config.vocab_size, config.d_model * config.mlp_ratio
    std = 0.02
    proj_std = std / np.sqrt(2 * config.n_layers)
    t: dict[str, Tensor] = {}

    def normal(name, shape, s):
        t[name] = Tensor(rng.normal(0.0, s, size=shape).astype(dtype), name=name)

    def const(name, shape, value):
        t[name] = Tensor(np.full(shape, value, dtype=dtype), name=name)

    normal("tok_emb", (v, d), std)
    normal("pos_emb", (config.context_length, d), std)
    for i in range(config.n_layers):
        p = f"h{i}."
        const(p + "ln1.g", (d,), 1.0)
        const(p + "ln1.b", (d,), 0.0)
        for name in ("attn.q", "attn.k", "attn.v"):
            normal(p + name + ".w", (d, d), std)
            const(p + name + ".b", (d,), 0.0)
        normal(p + "attn.o.w", (d, d), proj_std)
        const(p + "attn.o.b", (d,), 0.0)
        const(p + "ln2.g", (d,), 1.0)
        const(p + "ln2.b", (d,), 0.0)
        normal(p + "mlp.fc.w", (f, d), std)
        const(p + "mlp.fc.b", (f,), 0.0)
        normal(p + "mlp.proj.w", (d, f), proj_std)
        const(p + "mlp.proj.b", (d,), 0.0)
    const("ln_f.g", (d,), 1.0)
    const("ln_f.b", (d,), 0.0)
    normal("head.w", (v, d), std)
    return Parameters(config, t)


@dataclass
class LoraAdapter:
    """Low-rank factor pairs; target weight W acts as W + (alpha / rank) * B @ A."""

    selector: TargetSelector
    rank: int
    alpha: float
    dropout: float = 0.0
    factors: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def tensors(self) -> list[Tensor]:
        out = []
        for name in sorted(self.factors):
            out.extend(self.factors[name])
        return out

    def copy(self) -> "LoraAdapter":
        f = {
            k: (Tensor(a.data.copy(), requires_grad=a.requires_grad, name=a.name),
                Tensor(b.data.copy(), requires_grad=b.requires_grad, name=b.name))
            for k, (a, b) in self.factors.items()
        }
        return LoraAdapter(self.selector, self.rank, self.alpha, self.dropout, f)

    def astype(self, dtype) -> "LoraAdapter":
        out = self.copy()
        for a, b in out.factors.values():
            a.data = a.data.astype(dtype)
            b.data = b.data.astype(dtype)
        return out

    def delta(self, target: str) -> np.ndarray:
        a, b = self.factors[target]
        return self.scale * (b.data @ a.data)

    def checksum(self) -> str:
        h = hashlib.sha256(f"{self.selector.value}:{self.rank}:{self.alpha}".encode())
        for t in self.tensors():
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def init_adapter(
    params: Parameters,
    selector: TargetSelector | str = TargetSelector.MLP_ONLY,
    rank: int = 4,
    alpha: float = 32.0,
    dropout: float = 0.0,
    seed: int = 0,
) -> LoraAdapter:
    selector = TargetSelector.parse(selector)
    if rank < 1:
        raise ConfigError("LoRA rank must be >= 1")
    if not 0.0 <= dropout < 1.0:
        raise ConfigError("LoRA dropout must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    dtype = params.dtype
    factors = {}
    for i in range(params.config.n_layers):
        for mod in selector.modules():
            name = f"h{i}.{mod}"
            out_dim, in_dim = params[name + ".w"].shape
            bound = 1.0 / np.sqrt(in_dim)
            a = Tensor(rng.uniform(-bound, bound, size=(rank, in_dim)).astype(dtype), requires_grad=True, name=name + ".lora_a")
            b = Tensor(np.zeros((out_dim, rank), dtype=dtype), requires_grad=True, name=name + ".lora_b")
            factors[name] = (a, b)
    return LoraAdapter(selector, rank, float(alpha), float(dropout), factors)


def _lin(params, adapter, name, x, rng):
    w = params[name + ".w"]
    b = params[name + ".b"]
    if adapter is not None and name in adapter.factors:
        la, lb = adapter.factors[name]
        return linear(x, w, b, la, lb, adapter.scale, adapter.dropout, rng)
    return linear(x, w, b)


def forward(
    params: Parameters,
    adapter: LoraAdapter | None,
    tokens,
    prefix: Tensor | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Causal logits for ``tokens`` of shape (n,) or (B, n).

    ``prefix`` optionally prepends (B, m, d) embedding vectors ahead of the
    token embeddings; the returned logits cover only the token positions'
    inputs plus the prefix positions, i.e. shape (B, m + n, V).
    """
    cfg = params.config
    tokens = np.asarray(tokens, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None, :]
    bsz, n = tokens.shape
    m = 0 if prefix is None else prefix.shape[1]
    if n + m > cfg.context_length:
        raise LengthError(f"sequence of {n + m} positions exceeds context {cfg.context_length}")
    if n and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise IndexError("token id outside the vocabulary")

    x = embedding(params["tok_emb"], tokens)
    if prefix is not None:
        x = concat([prefix, x], axis=1)
    x = add(x, embedding(params["pos_emb"], np.arange(n + m)))
    for i in range(cfg.n_layers):
        p = f"h{i}."
        h = layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = _lin(params, adapter, p + "attn.q", h, rng)
        k = _lin(params, adapter, p + "attn.k", h, rng)
        v = _lin(params, adapter, p + "attn.v", h, rng)
        a = causal_attention(q, k, v, cfg.n_heads)
        x = add(x, _lin(params, adapter, p + "attn.o", a, rng))
        h = layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        h = gelu(_lin(params, adapter, p + "mlp.fc", h, rng))
        x = add(x, _lin(params, adapter, p + "mlp.proj", h, rng))
    x = layer_norm(x, params["ln_f.g"], params["ln_f.b"])
    logits = linear(x, params["head.w"])
    if single:
        logits = logits.reshape(logits.shape[1:])
    return logits

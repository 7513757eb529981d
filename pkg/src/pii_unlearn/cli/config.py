"""Experiment configuration: YAML file -> validated nested dataclasses."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from pii_unlearn.inversion import AnnotatorKind, AnnotatorSpec, InverterConfig
from pii_unlearn.model import DecodeConfig, DecodeMode, ModelConfig, TargetSelector
from pii_unlearn.numcore import OptimConfig
from pii_unlearn.unlearn import EarlyStop, PscuConfig, UnlearnMode

DEFAULT_CONFIG = "desk.yaml"


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, such as ``1e-3``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def _load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    context_length: int = 128

    def build(self, seed: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads, context_length=self.context_length, seed=seed
        ).validate()


@dataclass
class TrainSection:
    epochs: int = 6
    batch_size: int = 16
    lr: float = 3e-3
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    min_lr_frac: float = 0.1
    grad_clip: float = 1.0

    def optim(self) -> OptimConfig:
        return OptimConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            warmup_frac=self.warmup_frac,
            min_lr_frac=self.min_lr_frac,
            grad_clip=self.grad_clip,
        )


@dataclass
class GroupSpec:
    i: int = 10  # replication = 10 * i
    n: int = 20  # unique samples in this group


@dataclass
class CorpusSection:
    private_pool_size: int = 40
    public_pool_size: int = 200
    private_pool_file: str | None = None  # optional pre-built private pool (JSON)
    groups: list[GroupSpec] = field(default_factory=lambda: [GroupSpec()])
    n_background: int = 1000
    n_clean: int = 200  # held-out clean text for perplexity
    n_classification: int = 0  # labelled prompts mixed into training (accuracy utility)
    n_classification_eval: int = 200
    prefix_fraction: float = 0.5
    min_entity_len: int = 4

    @property
    def n_samples(self) -> int:
        return sum(g.n for g in self.groups)


@dataclass
class InverterSection:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    temperatures: list[float] = field(default_factory=lambda: [1.0])
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    n_background: int = 900  # public (non-training) sentences
    n_renderings: int = 900  # templates filled from the public pool
    n_heldout: int = 200

    def build(self, seed: int) -> InverterConfig:
        return InverterConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            max_len=self.max_len,
            temperatures=tuple(self.temperatures),
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=seed,
        ).validate()


@dataclass
class SynthesisSection:
    candidates_per_sample: int = 1


@dataclass
class AnnotatorSection:
    kind: str = "builtin"
    endpoint: str | None = None
    timeout: float = 10.0
    max_retries: int = 2
    backoff: float = 0.5
    max_in_flight: int = 4
    use_public_pool: bool = True

    def build(self, audit_path: str | None, endpoint_override: str | None = None) -> AnnotatorSpec:
        return AnnotatorSpec(
            kind=AnnotatorKind(self.kind),
            endpoint=endpoint_override or self.endpoint,
            timeout=self.timeout,
            max_retries=self.max_retries,
            backoff=self.backoff,
            max_in_flight=self.max_in_flight,
            audit_path=audit_path,
        )


@dataclass
class EarlyStopSection:
    utility: str = "ppl"
    max_ppl_ratio: float | None = 1.15
    max_acc_drop: float | None = 0.05
    privacy_target: float | None = None
    restore_on_utility_stop: bool = True


@dataclass
class UnlearnSection:
    mode: str = "pseudo"
    selector: str = "mlp"
    rank: int = 4
    lora_alpha: float = 32.0
    lora_dropout: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    eps: float = 1e-8
    lr: float = 1e-4
    epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    eval_every: int | None = None
    pseudo_fraction: float = 1.0  # subsample of D_pseudo (data-scale sweeps)
    ga_data: str = "pseudo"  # forget set the GA baseline ascends on
    early_stop: EarlyStopSection = field(default_factory=EarlyStopSection)

    def build(self, seed: int) -> PscuConfig:
        es = EarlyStop(**asdict(self.early_stop))
        return PscuConfig(
            alpha=self.alpha,
            beta=self.beta,
            eps=self.eps,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
            seed=seed,
            eval_every=self.eval_every,
            early_stop=es,
        ).validate()


@dataclass
class DecodeSection:
    mode: str = "greedy"
    temperature: float = 1.0
    top_k: int = 50
    top_p: float = 1.0
    num_continuations: int = 5
    max_new_tokens: int = 64

    def build(self, seed: int) -> DecodeConfig:
        return DecodeConfig(
            mode=DecodeMode(self.mode),
            temperature=self.temperature,
            top_k=self.top_k,
            top_p=self.top_p,
            num_continuations=self.num_continuations,
            max_new_tokens=self.max_new_tokens,
            seed=seed,
        )


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/desk"
    model_name: str = "byte-d128-L2"
    utility: str = "ppl"  # "ppl" or "accuracy"
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    inverter: InverterSection = field(default_factory=InverterSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    annotator: AnnotatorSection = field(default_factory=AnnotatorSection)
    unlearn: UnlearnSection = field(default_factory=UnlearnSection)
    decode: DecodeSection = field(default_factory=DecodeSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        try:
            self.model.build(0)
            self.inverter.build(0)
            self.unlearn.build(0)
            self.decode.build(0)
            self.annotator.build(None)
            UnlearnMode(self.unlearn.mode)
            TargetSelector.parse(self.unlearn.selector)
        except (ValueError, KeyError) as e:
            raise ConfigError(str(e)) from e
        c = self.corpus
        if not c.groups or any(g.i < 1 or g.n < 1 for g in c.groups):
            raise ConfigError("corpus.groups needs entries with i >= 1 and n >= 1")
        if c.private_pool_size < c.n_samples:
            raise ConfigError("private pool is smaller than the number of unique samples")
        if not 0.0 < c.prefix_fraction < 1.0:
            raise ConfigError("corpus.prefix_fraction must lie in (0, 1)")
        if self.utility not in ("ppl", "accuracy"):
            raise ConfigError("utility must be 'ppl' or 'accuracy'")
        if self.utility == "accuracy" and c.n_classification < 1:
            raise ConfigError("accuracy utility needs corpus.n_classification > 0")
        if self.unlearn.early_stop.utility != self.utility:
            raise ConfigError("unlearn.early_stop.utility must match the utility metric")
        if not 0.0 < self.unlearn.pseudo_fraction <= 1.0:
            raise ConfigError("unlearn.pseudo_fraction must lie in (0, 1]")
        if self.unlearn.ga_data not in ("pseudo", "oracle"):
            raise ConfigError("unlearn.ga_data must be 'pseudo' or 'oracle'")
        if self.synthesis.candidates_per_sample < 1:
            raise ConfigError("synthesis.candidates_per_sample must be >= 1")
        if self.inverter.n_background + self.inverter.n_renderings <= self.inverter.n_heldout + 1:
            raise ConfigError("inverter needs more records than its held-out split")
        return self

    def section_hash(self, *names: str) -> str:
        d = self.to_dict()
        payload = {n: d[n] for n in names}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(global_seed: int, name: str) -> int:
    """Stable 31-bit seed for a named consumer of randomness."""
    h = hashlib.sha256(f"{global_seed}:{name}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTION_TYPES.get((cls, name))
        if sub is not None and isinstance(value, list):
            kwargs[name] = [_build(sub, v, f"{where}.{name}[{i}]") for i, v in enumerate(value)]
        elif sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "train"): TrainSection,
    (ExperimentConfig, "corpus"): CorpusSection,
    (ExperimentConfig, "inverter"): InverterSection,
    (ExperimentConfig, "synthesis"): SynthesisSection,
    (ExperimentConfig, "annotator"): AnnotatorSection,
    (ExperimentConfig, "unlearn"): UnlearnSection,
    (ExperimentConfig, "decode"): DecodeSection,
    (CorpusSection, "groups"): GroupSpec,
    (UnlearnSection, "early_stop"): EarlyStopSection,
}


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """``section.key=value`` assignments; values parse as YAML scalars."""
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = _load_yaml(value)
    return raw


def default_config_text() -> str:
    return resources.files("pii_unlearn.cli").joinpath(DEFAULT_CONFIG).read_text(encoding="utf-8")


def load_config(path=None, overrides: list[str] | None = None, seed: int | None = None) -> ExperimentConfig:
    """Load ``path`` (or the bundled desk config), apply overrides, validate."""
    try:
        text = default_config_text() if path is None else Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    try:
        raw = _load_yaml(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = apply_overrides(raw, overrides or [])
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = _build(ExperimentConfig, raw, "config")
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()

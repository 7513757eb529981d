"""Checkpoint container: a single uncompressed ``.npz`` with a JSON header."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from pii_unlearn.model.transformer import LoraAdapter, ModelConfig, Parameters, TargetSelector
from pii_unlearn.numcore import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path,
    params: Parameters | None = None,
    adapters: dict[str, LoraAdapter] | None = None,
    meta: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> Path:
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}, "adapters": {}}
    arrays: dict[str, np.ndarray] = {}
    if params is not None:
        header["config"] = params.config.to_dict()
        for name, t in params.tensors.items():
            arrays["base/" + name] = t.data
    for tag, ad in (adapters or {}).items():
        header["adapters"][tag] = {
            "selector": ad.selector.value,
            "rank": ad.rank,
            "alpha": ad.alpha,
            "dropout": ad.dropout,
            "targets": sorted(ad.factors),
        }
        for target, (a, b) in ad.factors.items():
            arrays[f"lora/{tag}/{target}/a"] = a.data
            arrays[f"lora/{tag}/{target}/b"] = b.data
    for name, arr in (extra_arrays or {}).items():
        arrays["extra/" + name] = arr
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(params or None, adapters, meta, extra_arrays)``."""
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
        params = None
        if "config" in header:
            cfg = ModelConfig(**header["config"])
            tensors = {k[5:]: Tensor(z[k], name=k[5:]) for k in z.files if k.startswith("base/")}
            params = Parameters(cfg, tensors)
        adapters = {}
        for tag, spec in header["adapters"].items():
            factors = {}
            for target in spec["targets"]:
                a = Tensor(z[f"lora/{tag}/{target}/a"], requires_grad=True, name=target + ".lora_a")
                b = Tensor(z[f"lora/{tag}/{target}/b"], requires_grad=True, name=target + ".lora_b")
                factors[target] = (a, b)
            adapters[tag] = LoraAdapter(
                TargetSelector(spec["selector"]), spec["rank"], spec["alpha"], spec["dropout"], factors
            )
        extra = {k[6:]: z[k] for k in z.files if k.startswith("extra/")}
    return params, adapters, header["meta"], extra

from pii_unlearn.cli.config import ConfigError, ExperimentConfig, derive_seed, load_config
from pii_unlearn.cli.manifest import MissingPrerequisite, RunManifest, StageRecord, chain_hash, file_sha256

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MissingPrerequisite",
    "RunManifest",
    "StageRecord",
    "chain_hash",
    "derive_seed",
    "file_sha256",
    "load_config",
]

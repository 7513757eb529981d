from pii_unlearn.unlearn.losses import PscuTerms, ga_from_token_losses, ga_loss, pscu_from_token_losses, pscu_loss
from pii_unlearn.unlearn.trainer import (
    EarlyStop,
    EpochTrace,
    PscuConfig,
    StopDecision,
    UnlearnMode,
    UnlearnRun,
    UnlearnSample,
    early_stop_check,
    ga_train,
    pscu_train,
    unlearn_train,
)

__all__ = [
    "EarlyStop",
    "EpochTrace",
    "PscuConfig",
    "PscuTerms",
    "StopDecision",
    "UnlearnMode",
    "UnlearnRun",
    "UnlearnSample",
    "early_stop_check",
    "ga_from_token_losses",
    "ga_loss",
    "ga_train",
    "pscu_from_token_losses",
    "pscu_loss",
    "pscu_train",
    "unlearn_train",
]

"""Parameterized motion prior: a transformer that denoises motion sequences."""

from .model import (
    DEFAULT_VOCAB,
    Conditioning,
    PmpConfig,
    PmpModel,
    load_checkpoint,
    pmp_init,
    pmp_loss,
    pmp_refine,
    save_checkpoint,
    tokens_for,
)
from .train import (
    CorpusItem,
    TrainConfig,
    conditioning_for,
    grad_check,
    pmp_train,
    save_log_csv,
)

__all__ = [
    "DEFAULT_VOCAB", "Conditioning", "PmpConfig", "PmpModel",
    "load_checkpoint", "pmp_init", "pmp_loss", "pmp_refine",
    "save_checkpoint", "tokens_for", "CorpusItem", "TrainConfig",
    "conditioning_for", "grad_check", "pmp_train", "save_log_csv",
]

"""Masked contrastive forgetting loss and the full-sequence ascent baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pii_unlearn.numcore import ContractError, Tensor, add, cross_entropy_tokenwise, scale, weighted_sum


@dataclass
class PscuTerms:
    J: Tensor
    L_priv: Tensor
    L_gen: Tensor

    def values(self) -> dict[str, float]:
        return {"J": self.J.item(), "L_priv": self.L_priv.item(), "L_gen": self.L_gen.item()}


def pscu_from_token_losses(
    ce: Tensor,
    mask,
    alpha: float = 1.0,
    beta: float = 1.0,
    eps: float = 1e-8,
    valid=None,
) -> PscuTerms:
    """Split per-token CE into an entity stream and a context stream.

    ``L_priv = sum(M*l) / (sum(M) + eps)``, ``L_gen`` the same over ``1-M``,
    and ``J = alpha*L_gen - beta*L_priv``. Positions with ``valid == 0``
    (padding) belong to neither stream.
    """
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.shape[0] != ce.shape[0]:
        raise ContractError(f"mask length {mask.shape[0]} != token count {ce.shape[0]}")
    if np.any((mask != 0) & (mask != 1)):
        raise ContractError("privacy mask must be binary")
    v = np.ones_like(mask) if valid is None else np.asarray(valid, dtype=np.float64).reshape(-1)
    if v.shape != mask.shape:
        raise ContractError("valid mask must align with the privacy mask")
    priv_w = mask * v
    gen_w = (1.0 - mask) * v
    l_priv = weighted_sum(ce, priv_w / (priv_w.sum() + eps))
    l_gen = weighted_sum(ce, gen_w / (gen_w.sum() + eps))
    J = add(scale(l_gen, alpha), scale(l_priv, -beta))
    return PscuTerms(J, l_priv, l_gen)


def pscu_loss(logits: Tensor, targets, mask, alpha=1.0, beta=1.0, eps=1e-8, valid=None) -> PscuTerms:
    ce = cross_entropy_tokenwise(logits, targets)
    return pscu_from_token_losses(ce, mask, alpha, beta, eps, valid)


def ga_from_token_losses(ce: Tensor, valid=None) -> Tensor:
    """Negative mean CE over every (valid) token."""
    v = np.ones(ce.shape[0]) if valid is None else np.asarray(valid, dtype=np.float64).reshape(-1)
    return weighted_sum(ce, -v / v.sum())


def ga_loss(logits: Tensor, targets, valid=None) -> Tensor:
    return ga_from_token_losses(cross_entropy_tokenwise(logits, targets), valid)

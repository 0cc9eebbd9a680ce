"""Supervised segmentation loss and the per-class domain/adversarial pair.

The domain loss is the per-pixel negative log-likelihood of the true
domain, averaged over every pixel of the map; the adversarial loss is the
same expression with the domain label flipped. Probabilities are clamped
to [eps, 1-eps] so both stay finite.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EmptyLossError, InvalidDistributionError

PROB_EPS = 1e-7
DISTRIBUTION_TOL = 1e-6

SYNTHETIC_DOMAIN = 0
REAL_DOMAIN = 1


def seg_loss(logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = 0) -> torch.Tensor:
    """Mean per-pixel cross entropy over non-ignored pixels."""
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
        labels = labels.unsqueeze(0)
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise InvalidDistributionError(
            f"label shape {tuple(labels.shape)} incompatible with logits {tuple(logits.shape)}"
        )
    counted = (labels != ignore_index).sum()
    if counted.item() == 0:
        raise EmptyLossError("every pixel carries the ignore index")
    return F.cross_entropy(logits, labels, ignore_index=ignore_index, reduction="mean")


def domain_index(d) -> int:
    """Accept a bare index or a one-hot pair over {synthetic=0, real=1}."""
    if isinstance(d, (int, np.integer)):
        if d not in (SYNTHETIC_DOMAIN, REAL_DOMAIN):
            raise InvalidDistributionError(f"domain index must be 0 or 1, got {d}")
        return int(d)
    arr = np.asarray(d, dtype=float)
    if arr.shape != (2,) or sorted(arr.tolist()) != [0.0, 1.0]:
        raise InvalidDistributionError(f"domain label must be one-hot over two domains, got {d}")
    return int(arr.argmax())


def flip_domain(d) -> int:
    return 1 - domain_index(d)


def _check_prob_map(prob_map: torch.Tensor) -> torch.Tensor:
    if prob_map.dim() == 3:
        prob_map = prob_map.unsqueeze(0)
    if prob_map.dim() != 4 or prob_map.shape[1] != 2:
        raise InvalidDistributionError(
            f"expected a 2-channel probability map, got shape {tuple(prob_map.shape)}"
        )
    total = prob_map.sum(dim=1)
    if (total - 1.0).abs().max().item() > DISTRIBUTION_TOL:
        raise InvalidDistributionError("per-pixel probabilities do not sum to 1")
    return prob_map


def domain_loss(prob_map: torch.Tensor, d) -> torch.Tensor:
    """Negative log-probability of the true domain, averaged over all pixels."""
    prob_map = _check_prob_map(prob_map)
    idx = domain_index(d)
    p = prob_map[:, idx].clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -torch.log(p).mean()


def adversarial_loss(prob_map: torch.Tensor, d) -> torch.Tensor:
    """Negative log-probability of the flipped domain — identical to the
    domain loss evaluated at 1-d."""
    return domain_loss(prob_map, flip_domain(d))

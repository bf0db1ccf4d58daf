"""Training objectives over one visit's probability vector ``o``."""
from __future__ import annotations

import torch

from .errors import ValidationError

PROB_CLAMP = 1e-7


def loss_bce(o, y):
    o = o.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * torch.log(o) + (1.0 - y) * torch.log(1.0 - o)).mean()


def loss_multi(o, y):
    """Multi-label margin: sum over (positive, negative) pairs of
    ``max(0, 1 - (o_pos - o_neg))``, divided by the number of drugs."""
    pos = y > 0.5
    if not bool(pos.any()):
        raise ValidationError("multi-label margin needs at least one positive label")
    neg = ~pos
    if not bool(neg.any()):
        return o.sum() * 0.0
    gap = o[pos].unsqueeze(1) - o[neg].unsqueeze(0)
    return torch.relu(1.0 - gap).sum() / o.shape[-1]


def loss_ddi(o, D):
    """Expected interacting-pair mass ``sum_{i<j} D_ij o_i o_j`` over the
    number of unordered drug pairs."""
    m = o.shape[-1]
    if m < 2:
        raise ValidationError("the DDI loss needs at least two drugs")
    return 0.5 * (o @ (D @ o)) / (m * (m - 1) / 2)


def combine(l_bce, l_multi, l_ddi, alpha, beta):
    return beta * (alpha * l_bce + (1.0 - alpha) * l_multi) + (1.0 - beta) * l_ddi


def total_loss(o, y, D, alpha, beta):
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise ValidationError(f"alpha and beta must lie in [0, 1], got {alpha}, {beta}")
    return combine(loss_bce(o, y), loss_multi(o, y), loss_ddi(o, D), alpha, beta)

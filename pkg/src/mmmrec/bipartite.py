"""Patient-conditioned substructure weighting through the drug/substructure mask."""
from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ValidationError


class BipartiteEncoder(nn.Module):
    def __init__(self, mask, dim=64):
        super().__init__()
        mask = torch.as_tensor(mask)
        if mask.ndim != 2:
            raise ValidationError("mask must be a drugs x substructures matrix")
        n_drugs, n_sub = mask.shape
        self.register_buffer("mask", mask.to(torch.get_default_dtype()))
        self.substructure = nn.Linear(dim, n_sub)
        k = 1.0 / math.sqrt(max(n_sub, 1))
        self.W3 = nn.Parameter(torch.empty(n_drugs, n_sub).uniform_(-k, k))
        self.b3 = nn.Parameter(torch.zeros(n_drugs))

    def importance(self, h):
        return substructure_importance(h, self.substructure)

    def local(self, m_s):
        return local_drug_vector(m_s, self.W3, self.mask, self.b3)

    def forward(self, h):
        m_s = self.importance(h)
        return m_s, self.local(m_s)


def substructure_importance(h, layer):
    """``sigmoid(W_s h + b_s)``: one weight in (0, 1) per substructure."""
    if h.shape[-1] != layer.in_features:
        raise ValidationError(f"patient state has length {h.shape[-1]}, expected {layer.in_features}")
    return torch.sigmoid(layer(h))


def local_drug_vector(m_s, W3, mask, b3):
    """``(W3 * H) m_s + b3``. Weights outside a drug's substructures are
    zeroed before the product, so they never reach the output."""
    if W3.shape != mask.shape or m_s.shape[-1] != W3.shape[1] or b3.shape[-1] != W3.shape[0]:
        raise ValidationError(
            f"shape mismatch: W3 {tuple(W3.shape)}, H {tuple(mask.shape)}, m_s {tuple(m_s.shape)}, b3 {tuple(b3.shape)}"
        )
    return (W3 * mask) @ m_s + b3

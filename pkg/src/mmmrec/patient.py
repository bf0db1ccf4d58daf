"""Longitudinal patient encoder.

Each visit's diagnosis and procedure codes are mean-pooled from their own
embedding tables, the two visit sequences are run through separate GRUs, and
the final outputs are concatenated and passed through ``tanh(W1 x + b)``.
Medication history is deliberately not an input.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ValidationError


@dataclass
class VisitCodes:
    """Code lists of a visit sequence packed for ``embedding_bag``."""

    dx: torch.Tensor
    dx_offsets: torch.Tensor
    px: torch.Tensor
    px_offsets: torch.Tensor
    n_visits: int

    @classmethod
    def from_visits(cls, visits):
        if not visits:
            raise ValidationError("a patient history needs at least one visit")
        dx, px, dx_off, px_off = [], [], [], []
        for v in visits:
            dx_off.append(len(dx))
            px_off.append(len(px))
            dx.extend(v.diagnoses)
            px.extend(v.procedures)
        as_long = lambda x: torch.tensor(x, dtype=torch.long)  # noqa: E731
        return cls(as_long(dx), as_long(dx_off), as_long(px), as_long(px_off), len(visits))

    def prefix(self, t):
        """Codes of the first ``t`` visits."""
        if not 1 <= t <= self.n_visits:
            raise ValidationError(f"prefix length {t} outside [1, {self.n_visits}]")
        dx_end = self.dx_offsets[t].item() if t < self.n_visits else len(self.dx)
        px_end = self.px_offsets[t].item() if t < self.n_visits else len(self.px)
        return VisitCodes(self.dx[:dx_end], self.dx_offsets[:t], self.px[:px_end], self.px_offsets[:t], t)


def _pool(codes, offsets, n_visits, table):
    """Mean embedding per visit; a visit without codes pools to zero."""
    if codes.numel() and (codes.min() < 0 or codes.max() >= table.shape[0]):
        bad = codes[(codes < 0) | (codes >= table.shape[0])][0].item()
        raise ValidationError(f"code {bad} outside embedding table of {table.shape[0]} rows")
    return F.embedding_bag(codes, table, offsets, mode="mean")[:n_visits]


def embed_visit(codes, table):
    """Mean of ``table`` rows for one visit's code list."""
    codes = torch.as_tensor(list(codes), dtype=torch.long)
    if codes.numel() == 0:
        raise ValidationError("cannot embed a visit without codes")
    return _pool(codes, torch.zeros(1, dtype=torch.long), 1, table)[0]


class PatientEncoder(nn.Module):
    def __init__(self, n_dx, n_px, emb_dim=64, dim=64):
        super().__init__()
        self.dx_embedding = nn.Embedding(n_dx, emb_dim)
        self.px_embedding = nn.Embedding(n_px, emb_dim)
        self.dx_rnn = nn.GRU(emb_dim, emb_dim, batch_first=True)
        self.px_rnn = nn.GRU(emb_dim, emb_dim, batch_first=True)
        self.project = nn.Linear(2 * emb_dim, dim)
        self.dim = dim

    def sequence_outputs(self, codes: VisitCodes):
        """Patient state after every visit, shape (t, dim)."""
        d = _pool(codes.dx, codes.dx_offsets, codes.n_visits, self.dx_embedding.weight)
        p = _pool(codes.px, codes.px_offsets, codes.n_visits, self.px_embedding.weight)
        r_dx, _ = self.dx_rnn(d.unsqueeze(0))
        r_px, _ = self.px_rnn(p.unsqueeze(0))
        return torch.tanh(self.project(torch.cat([r_dx[0], r_px[0]], dim=-1)))

    def forward(self, codes: VisitCodes):
        """State ``h`` after the last visit in ``codes``."""
        return self.sequence_outputs(codes)[-1]


def encode_patient(visits, encoder):
    return encoder(VisitCodes.from_visits(visits))

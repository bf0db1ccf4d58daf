"""The full recommender: patient state, global and local drug vectors, fusion."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .bipartite import BipartiteEncoder
from .drug import ElfDrugEncoder, PatchCNN
from .errors import ValidationError
from .patient import PatientEncoder

ABLATIONS = (None, "elf", "bipartite")


@dataclass
class ModelConfig:
    emb_dim: int = 64
    dim: int = 64
    feat_dim: int = 128
    mlp_hidden: int | None = 128
    patch_size: int = 32
    cnn_channels: tuple[int, int] = (8, 16)
    train_cnn: bool = False
    rnn_cell: str = "gru"

    def as_dict(self):
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "cnn_channels" in d:
            d["cnn_channels"] = tuple(d["cnn_channels"])
        return cls(**d)


@dataclass
class Prediction:
    o_hat: np.ndarray
    m_hat: frozenset = field(default_factory=frozenset)


def fuse(m_g, m_l):
    """``sigmoid(m_g * m_l)``."""
    return torch.sigmoid(m_g * m_l)


def predict(m_g, m_l, threshold=0.5):
    """Probabilities and the recommended set ``{i : o_i >= threshold}``."""
    m_g = torch.as_tensor(m_g, dtype=torch.float64)
    m_l = torch.as_tensor(m_l, dtype=torch.float64)
    if m_g.shape != m_l.shape:
        raise ValidationError(f"global and local vectors differ in length: {tuple(m_g.shape)} vs {tuple(m_l.shape)}")
    o = fuse(m_g, m_l).detach().numpy()
    return Prediction(o, threshold_set(o, threshold))


def threshold_set(o, threshold):
    return frozenset(int(i) for i in np.flatnonzero(np.asarray(o) >= threshold))


@contextmanager
def seeded(seed):
    """Run module construction under its own torch RNG state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def build_cnn(config, seed):
    with seeded(seed * 4 + 1):
        return PatchCNN(config.patch_size, config.feat_dim, config.cnn_channels)


class MMM(nn.Module):
    """Each block is initialised from its own seed derived from ``seed``, so
    the CNN matches the one ``build_cnn(config, seed)`` returns."""

    def __init__(self, config, vocab, mask, drug_patches=None, drug_features=None, drop=None, seed=0):
        super().__init__()
        if config.rnn_cell != "gru":
            raise ValidationError(f"unsupported rnn_cell {config.rnn_cell!r}")
        if drop not in ABLATIONS:
            raise ValidationError(f"unknown ablation {drop!r}; choose from elf, bipartite")
        self.config = config
        self.vocab = vocab
        self.drop = drop
        self.seed = seed
        with seeded(seed * 4):
            self.patient = PatientEncoder(vocab.n_dx, vocab.n_px, config.emb_dim, config.dim)
        cnn = build_cnn(config, seed)
        with seeded(seed * 4 + 2):
            self.drug = ElfDrugEncoder(
                vocab.n_drugs, config.dim, config.feat_dim, config.mlp_hidden, cnn=cnn,
                patches=drug_patches, features=drug_features, train_cnn=config.train_cnn,
            )
        with seeded(seed * 4 + 3):
            self.bipartite = BipartiteEncoder(mask, config.dim)

    @property
    def n_drugs(self):
        return self.drug.n_drugs

    def heads(self, h):
        """All intermediate vectors for one patient state ``h``."""
        out = {"h": h}
        if self.drop == "elf":
            out["m_g"] = torch.ones(self.n_drugs, dtype=h.dtype)
        else:
            out["Y"] = Y = self.drug.project(self.drug.drug_features())
            out["m_a"], out["m_g"] = self.drug.global_vector(h, Y)
        if self.drop == "bipartite":
            out["m_l"] = torch.ones(self.n_drugs, dtype=h.dtype)
        else:
            out["m_s"], out["m_l"] = self.bipartite(h)
        out["o_hat"] = fuse(out["m_g"], out["m_l"])
        return out

    def forward(self, codes):
        """Intermediates for the last visit of ``codes``."""
        return self.heads(self.patient(codes))

    @torch.no_grad()
    def visit_probabilities(self, codes):
        """``o_hat`` after every visit, shape (t, n_drugs)."""
        hs = self.patient.sequence_outputs(codes)
        return torch.stack([self.heads(h)["o_hat"] for h in hs])

    def param_groups(self):
        """Trainable parameters keyed by the block they belong to."""
        groups = {}
        for name, p in self.named_parameters():
            groups.setdefault(name.split(".")[0] + "." + name.split(".")[1], []).append((name, p))
        return groups

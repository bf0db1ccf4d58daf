"""ELF-volume drug encoder.

Patches of each drug's ELF volume go through a small CNN; the patch features
are max-pooled into one row of ``C`` per drug, projected by an MLP to ``Y``,
and matched against the patient state to give per-drug suitability ``m_a`` and
the global drug vector ``m_g``.

The CNN is a fixed random feature extractor by default: ``C`` is computed once
and stored as a buffer, so training touches only the MLP and the global head.
Pass ``train_cnn=True`` to recompute ``C`` from the patches at every step.
"""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ValidationError


class PatchCNN(nn.Module):
    """conv3x3-ReLU-pool2 twice, then an affine head to ``feat_dim``."""

    def __init__(self, patch_size, feat_dim=128, channels=(8, 16)):
        super().__init__()
        if patch_size < 4:
            raise ValidationError(f"patch size {patch_size} too small for two 2x2 pools")
        c1, c2 = channels
        self.conv1 = nn.Conv2d(1, c1, 3, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, padding=1)
        side = patch_size // 4
        self.head = nn.Linear(c2 * side * side, feat_dim)
        self.patch_size = patch_size
        self.feat_dim = feat_dim

    def forward(self, patches):
        x = patches.reshape(-1, 1, self.patch_size, self.patch_size)
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        return self.head(x.flatten(1))


def encode_drug(patches, cnn):
    """Coordinatewise max of the CNN features over one drug's patches."""
    patches = torch.as_tensor(patches, dtype=next(cnn.parameters()).dtype)
    if patches.ndim != 3 or patches.shape[0] == 0:
        raise ValidationError("encode_drug needs a non-empty (n, p, p) patch stack")
    return cnn(patches).amax(dim=0)


def standardize(C, eps=1e-6):
    """Zero mean, unit variance per column; a constant column maps to 0."""
    centred = C - C.mean(dim=0)
    return centred / (centred.pow(2).mean(dim=0).sqrt() + eps)


def make_mlp(feat_dim, dim, hidden=128):
    if hidden is None:
        return nn.Linear(feat_dim, dim)
    return nn.Sequential(nn.Linear(feat_dim, hidden), nn.ReLU(), nn.Linear(hidden, dim))


class ElfDrugEncoder(nn.Module):
    def __init__(self, n_drugs, dim=64, feat_dim=128, mlp_hidden=128, cnn=None, patches=None, features=None,
                 train_cnn=False):
        super().__init__()
        self.n_drugs = n_drugs
        self.train_cnn = train_cnn
        self.cnn = cnn
        if cnn is not None and not train_cnn:
            for p in cnn.parameters():
                p.requires_grad_(False)
        if train_cnn:
            if cnn is None or patches is None:
                raise ValidationError("a trainable CNN needs both the network and the drug patches")
            self.register_buffer("patches", torch.as_tensor(patches, dtype=torch.get_default_dtype()))
        else:
            self.patches = None
        if features is None and not train_cnn:
            if cnn is None or patches is None:
                raise ValidationError("need precomputed drug features or a CNN with patches")
            with torch.no_grad():
                features = torch.stack([encode_drug(p, cnn) for p in torch.as_tensor(patches)])
        if features is not None:
            features = torch.as_tensor(features, dtype=torch.get_default_dtype())
            if features.shape != (n_drugs, feat_dim):
                raise ValidationError(f"drug features have shape {tuple(features.shape)}, expected ({n_drugs}, {feat_dim})")
            self.register_buffer("features", features.clone())
        else:
            self.features = None
        self.mlp = make_mlp(feat_dim, dim, mlp_hidden)
        self.global_ff = nn.Linear(n_drugs, n_drugs)
        self.layer_norm = nn.LayerNorm(n_drugs, eps=1e-5)

    def features_from_patches(self, patches):
        """``C`` for a (n_drugs, n_patches, p, p) stack."""
        n, k = patches.shape[:2]
        feats = self.cnn(patches.reshape(n * k, *patches.shape[2:]).to(next(self.cnn.parameters()).dtype))
        return feats.reshape(n, k, -1).amax(dim=1)

    def drug_features(self):
        """``C`` standardised per feature across drugs."""
        C = self.features_from_patches(self.patches) if self.train_cnn else self.features
        return standardize(C)

    def project(self, C):
        return self.mlp(C)

    def global_vector(self, h, Y):
        """Suitability ``m_a = sigmoid(Y h)`` and ``m_g = LN(m_a + relu(W2 m_a + b2))``."""
        if h.shape[-1] != Y.shape[-1]:
            raise ValidationError(f"patient state has length {h.shape[-1]} but drug embeddings have {Y.shape[-1]}")
        m_a = torch.sigmoid(Y @ h)
        m_g = self.layer_norm(m_a + F.relu(self.global_ff(m_a)))
        return m_a, m_g

    def forward(self, h):
        Y = self.project(self.drug_features())
        return self.global_vector(h, Y)

import numpy as np
import pytest
import torch

from mmmrec.corpus import DdiMatrix, DrugRegistry, DrugRegistryEntry, EhrCorpus, Patient, Visit, VocabSizes
from mmmrec.model import MMM, ModelConfig
from mmmrec.synth import SynthSpec, generate


@pytest.fixture
def tiny_registry():
    """Five drugs over seven substructures; drugs 3 and 4 share ATC3 C07."""
    rows = [
        (0, 101, "N02", {0, 1}),
        (1, 102, "C07", {1, 2, 3}),
        (2, 103, "A02", set()),
        (3, 104, "C07", {4, 5}),
        (4, 105, "C07", {6, 0}),
    ]
    entries = [DrugRegistryEntry(i, f"d{i}", "C", cid, atc, frozenset(subs)) for i, cid, atc, subs in rows]
    return DrugRegistry(entries, 7)


@pytest.fixture
def tiny_pairs():
    return frozenset({(101, 102), (102, 104)})


@pytest.fixture
def tiny_vocab():
    return VocabSizes(10, 10, 5, 7)


@pytest.fixture
def tiny_corpus(tiny_vocab):
    patients = [
        Patient(0, [Visit([1, 2], [3], {0, 1}), Visit([4], [5, 6], {1, 3})]),
        Patient(1, [Visit([7, 8, 9], [0], {2})]),
        Patient(2, [Visit([0], [1], {0, 4}), Visit([2, 3], [2], {3}), Visit([5], [9], {1, 2, 4})]),
    ]
    return EhrCorpus(patients, tiny_vocab)


def make_tiny_model(registry, vocab, drop=None, seed=0, dtype=torch.float64):
    config = ModelConfig(emb_dim=4, dim=3, feat_dim=6, mlp_hidden=5, patch_size=4, cnn_channels=(2, 2))
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(vocab.n_drugs, config.feat_dim))
    model = MMM(config, vocab, registry.mask_matrix(), drug_features=feats, drop=drop, seed=seed)
    return model.to(dtype)


@pytest.fixture
def tiny_model(tiny_registry, tiny_vocab):
    return make_tiny_model(tiny_registry, tiny_vocab)


@pytest.fixture
def tiny_ddi(tiny_registry, tiny_pairs):
    return DdiMatrix.from_cid_pairs(tiny_pairs, tiny_registry)


@pytest.fixture(scope="session")
def synth_small():
    return generate(SynthSpec(n_patients=30, seed=3))

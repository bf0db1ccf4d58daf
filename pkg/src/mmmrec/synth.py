"""Deterministic synthetic corpora shaped like a preprocessed MIMIC-III extract.

Each patient carries a few latent conditions. A condition owns a pool of
diagnosis and procedure codes (its first codes are always charted) and a fixed
drug regimen, so prescriptions are predictable from the coded history the way
they are in real records. Drug and substructure popularity follow a Zipf law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .corpus import (
    DrugRegistry,
    DrugRegistryEntry,
    EhrCorpus,
    Patient,
    Visit,
    VocabSizes,
    write_corpus,
)
from .elf import synth_molecule
from .errors import ValidationError


@dataclass(frozen=True)
class TargetStats:
    n_dx: int = 1942
    n_px: int = 1399
    n_drugs: int = 250
    n_substructures: int = 442
    n_ddi_pairs: int = 4918
    mean_visits: float = 2.60
    max_visits: int = 29
    mean_dx: float = 10.38
    max_dx: int = 128
    mean_px: float = 3.85
    max_px: int = 50
    mean_meds: float = 7.67
    max_meds: int = 68


@dataclass(frozen=True)
class SynthSpec:
    n_patients: int = 600
    seed: int = 1
    stats: TargetStats = field(default_factory=TargetStats)
    n_conditions: int = 60
    n_atc3: int = 100
    zipf_exponent: float = 1.1


@dataclass
class _Condition:
    dx_pool: np.ndarray
    px_pool: np.ndarray
    drug_order: np.ndarray  # popularity-weighted ordering; the regimen is a prefix
    size_factor: float

    def regimen(self, scale):
        return self.drug_order[: max(1, int(round(scale * self.size_factor)))]


def check_feasible(spec):
    s = spec.stats
    if spec.n_patients < 1:
        raise ValidationError(f"n_patients must be >= 1, got {spec.n_patients}")
    if min(s.n_dx, s.n_px, s.n_drugs, s.n_substructures) < 1:
        raise ValidationError("vocabulary sizes must be positive")
    if s.n_ddi_pairs > comb(s.n_drugs, 2):
        raise ValidationError(f"{s.n_ddi_pairs} DDI pairs exceed the {comb(s.n_drugs, 2)} possible among {s.n_drugs} drugs")
    for name, mean, cap, bound in (
        ("visits", s.mean_visits, s.max_visits, None),
        ("dx", s.mean_dx, s.max_dx, s.n_dx),
        ("px", s.mean_px, s.max_px, s.n_px),
        ("meds", s.mean_meds, s.max_meds, s.n_drugs),
    ):
        if not 1.0 <= mean <= cap:
            raise ValidationError(f"mean {name} {mean} must lie in [1, {cap}]")
        if bound is not None and mean > bound:
            raise ValidationError(f"mean {name} per visit {mean} exceeds the vocabulary size {bound}")


def zipf_weights(n, exponent, rng):
    """Popularity weights proportional to rank^-exponent over a random ranking."""
    w = 1.0 / np.arange(1, n + 1) ** exponent
    w = w[rng.permutation(n)]
    return w / w.sum()


def _count(rng, mean, cap, dispersion=2.0):
    """1 + negative binomial with the requested overall mean, capped."""
    extra = mean - 1.0
    if extra <= 0:
        return 1
    p = dispersion / (dispersion + extra)
    return int(min(cap, 1 + rng.negative_binomial(dispersion, p)))


def _atc3_codes(n):
    letters = "ABCDGHJLMNPRSV"
    codes = [f"{letters[i % len(letters)]}{(i // len(letters)) + 1:02d}" for i in range(n)]
    return codes


def build_registry(spec, rng):
    s = spec.stats
    drug_pop = zipf_weights(s.n_drugs, spec.zipf_exponent, rng)
    sub_pop = zipf_weights(s.n_substructures, spec.zipf_exponent, rng)
    n_atc3 = max(1, min(spec.n_atc3, s.n_drugs))
    atc_names = _atc3_codes(n_atc3)
    # every group gets one drug, the rest are spread with a popularity skew
    atc_of = np.concatenate([np.arange(n_atc3), rng.choice(n_atc3, s.n_drugs - n_atc3, p=zipf_weights(n_atc3, 1.0, rng))])
    atc_of = atc_of[rng.permutation(s.n_drugs)]
    cids = np.sort(rng.choice(np.arange(1000, 1000 + 400 * s.n_drugs), s.n_drugs, replace=False))
    cids = cids[rng.permutation(s.n_drugs)]
    entries = []
    for i in range(s.n_drugs):
        k = int(min(s.n_substructures, 1 + rng.poisson(4.0)))
        subs = rng.choice(s.n_substructures, k, replace=False, p=sub_pop)
        mol = synth_molecule(i, spec.seed)
        smiles = "".join("[H]" if a.element == "H" else a.element for a in mol.atoms)
        entries.append(
            DrugRegistryEntry(i, f"drug_{i:03d}", smiles, int(cids[i]), atc_names[atc_of[i]], frozenset(int(x) for x in subs))
        )
    return DrugRegistry(entries, s.n_substructures), drug_pop


def sample_cid_pairs(registry, n_pairs, rng):
    """Uniform sample without replacement over unordered CID pairs."""
    cids = registry.cid_values
    iu, ju = np.triu_indices(len(cids), 1)
    pick = rng.choice(len(iu), n_pairs, replace=False)
    return frozenset((int(cids[iu[k]]), int(cids[ju[k]])) for k in pick)


def _conditions(spec, drug_pop, rng):
    s = spec.stats
    out = []
    for _ in range(spec.n_conditions):
        dx_pool = rng.choice(s.n_dx, min(s.n_dx, 24), replace=False)
        px_pool = rng.choice(s.n_px, min(s.n_px, 8), replace=False)
        order = rng.choice(s.n_drugs, s.n_drugs, replace=False, p=drug_pop)
        out.append(_Condition(dx_pool, px_pool, order, float(rng.uniform(0.4, 1.6))))
    return out


def _codes(rng, pools, n, vocab, n_signature):
    chosen = []
    for pool in pools:
        chosen.extend(int(c) for c in pool[:n_signature])
    chosen = list(dict.fromkeys(chosen))
    rest = np.unique(np.concatenate([pool[n_signature:] for pool in pools]))
    rest = [int(c) for c in rng.permutation(rest) if int(c) not in chosen]
    need = max(0, n - len(chosen))
    chosen.extend(rest[: int(round(0.8 * need))])
    while len(chosen) < n and len(chosen) < vocab:
        c = int(rng.integers(vocab))
        if c not in chosen:
            chosen.append(c)
    return chosen[:n]


def _medications(conditions, active, scale, cap):
    meds = set()
    for c in active:
        meds.update(int(d) for d in conditions[c].regimen(scale))
    return sorted(meds)[:cap]


def calibrate_regimen_scale(conditions, visit_conditions, target, cap, iters=60):
    """Regimen scale whose realised mean prescription size is closest to
    ``target``. The mean is non-decreasing in the scale, so bisect."""

    def mean_at(scale):
        return float(np.mean([len(_medications(conditions, a, scale, cap)) for a in visit_conditions]))

    lo, hi = 0.0, float(len(conditions[0].drug_order)) * 2.5
    best, best_err = hi, float("inf")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        m = mean_at(mid)
        if abs(m - target) < best_err:
            best, best_err = mid, abs(m - target)
        if m < target:
            lo = mid
        else:
            hi = mid
    return best


def generate(spec):
    """Build (corpus, registry, cid_pairs) for ``spec``."""
    check_feasible(spec)
    s = spec.stats
    reg_rng, cond_rng, pat_rng = (np.random.default_rng(ss) for ss in np.random.SeedSequence(spec.seed).spawn(3))
    registry, drug_pop = build_registry(spec, reg_rng)
    cid_pairs = sample_cid_pairs(registry, s.n_ddi_pairs, reg_rng)
    conditions = _conditions(spec, drug_pop, cond_rng)
    n_cond = len(conditions)
    skeleton = []
    for pid in range(spec.n_patients):
        chronic = pat_rng.choice(n_cond, min(n_cond, 1 + int(pat_rng.random() < 0.4)), replace=False)
        visits = []
        for _ in range(_count(pat_rng, s.mean_visits, s.max_visits, dispersion=1.0)):
            acute = pat_rng.choice(n_cond, int(min(n_cond, pat_rng.poisson(0.5))), replace=False)
            active = list(dict.fromkeys(int(c) for c in np.concatenate([chronic, acute])))
            conds = [conditions[c] for c in active]
            dx = _codes(pat_rng, [c.dx_pool for c in conds], _count(pat_rng, s.mean_dx, s.max_dx), s.n_dx, 2)
            px = _codes(pat_rng, [c.px_pool for c in conds], _count(pat_rng, s.mean_px, s.max_px), s.n_px, 1)
            visits.append((dx, px, active))
        skeleton.append(visits)
    scale = calibrate_regimen_scale(conditions, [a for vs in skeleton for _, _, a in vs], s.mean_meds, s.max_meds)
    patients = [
        Patient(pid, [Visit(dx, px, frozenset(_medications(conditions, a, scale, s.max_meds))) for dx, px, a in vs])
        for pid, vs in enumerate(skeleton)
    ]
    vocab = VocabSizes(s.n_dx, s.n_px, s.n_drugs, s.n_substructures)
    return EhrCorpus(patients, vocab), registry, cid_pairs


def synth_corpus(spec, out_dir):
    """Generate and write the four corpus files; returns what was written."""
    corpus, registry, cid_pairs = generate(spec)
    write_corpus(out_dir, corpus, registry, cid_pairs)
    return corpus, registry, cid_pairs


def corpus_statistics(corpus):
    visits = [v for p in corpus.patients for v in p.visits]
    return {
        "n_patients": len(corpus.patients),
        "n_visits": len(visits),
        "mean_visits": len(visits) / len(corpus.patients),
        "max_visits": max(len(p.visits) for p in corpus.patients),
        "mean_dx": float(np.mean([len(v.diagnoses) for v in visits])),
        "max_dx": max(len(v.diagnoses) for v in visits),
        "mean_px": float(np.mean([len(v.procedures) for v in visits])),
        "max_px": max(len(v.procedures) for v in visits),
        "mean_meds": float(np.mean([len(v.medications) for v in visits])),
        "max_meds": max(len(v.medications) for v in visits),
    }

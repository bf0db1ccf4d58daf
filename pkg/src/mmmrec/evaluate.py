"""Metrics at the compound (CID) and therapeutic-group (ATC3) levels,
bootstrap comparison of two models, and per-patient case reports."""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import kernels
from .corpus import cid_adjacency
from .errors import ValidationError
from .model import threshold_set
from .patient import VisitCodes
from .stats import paired_t_test

METRICS = ("ddi_rate", "jaccard", "f1", "n_drugs")


def _cids(drugs, registry):
    try:
        return {registry.cid(d) for d in drugs}
    except IndexError as exc:
        raise ValidationError(f"prediction references a drug outside the registry: {sorted(drugs)}") from exc


def _atc3(drugs, registry):
    try:
        return {registry.atc3(d) for d in drugs}
    except IndexError as exc:
        raise ValidationError(f"set references a drug outside the registry: {sorted(drugs)}") from exc


def ddi_rate(pred, registry, cid_pairs):
    """Share of unordered pairs of distinct predicted compounds that interact."""
    cids = sorted(_cids(pred, registry))
    if len(cids) < 2:
        return 0.0
    pairs = list(itertools.combinations(cids, 2))
    return sum(1 for pair in pairs if pair in cid_pairs) / len(pairs)


def jaccard_atc3(pred, truth, registry):
    P, T = _atc3(pred, registry), _atc3(truth, registry)
    if not P:
        return 0.0
    return len(P & T) / len(P | T)


def f1_atc3(pred, truth, registry):
    P, T = _atc3(pred, registry), _atc3(truth, registry)
    if not P:
        return 0.0
    return 2 * len(P & T) / (len(P) + len(T))


@dataclass
class VisitMetrics:
    pid: int
    visit: int
    ddi_rate: float
    jaccard: float
    f1: float
    n_drugs: int


@dataclass
class SplitEvaluation:
    visits: list[VisitMetrics]
    means: dict
    predictions: list[frozenset] = field(default_factory=list, repr=False)

    def metrics_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pid", "visit", *METRICS])
        for v in self.visits:
            w.writerow([v.pid, v.visit, repr(v.ddi_rate), repr(v.jaccard), repr(v.f1), v.n_drugs])
        return buf.getvalue()


class MetricContext:
    """Registry lookups prepared for vectorised per-visit scoring."""

    def __init__(self, registry, cid_pairs):
        self.registry = registry
        self.cid_pairs = frozenset(cid_pairs)
        self.cid_adj = cid_adjacency(self.cid_pairs, registry.cid_values)

    def ddi_rates(self, pred_sets):
        pred = np.zeros((len(pred_sets), len(self.registry)), dtype=np.uint8)
        for i, s in enumerate(pred_sets):
            if s:
                pred[i, sorted(s)] = 1
        inter, total = kernels.ddi_pair_counts(pred, self.registry.cid_index, self.cid_adj)
        return np.where(total > 0, inter / np.maximum(total, 1), 0.0)


def score_sets(pred_sets, truth_sets, ctx, keys=None):
    """Per-visit metrics for aligned prediction/truth sets."""
    if len(pred_sets) != len(truth_sets):
        raise ValidationError("predictions and truths differ in length")
    keys = keys or [(-1, i) for i in range(len(pred_sets))]
    rates = ctx.ddi_rates(pred_sets)
    out = []
    for (pid, t), P, T, rate in zip(keys, pred_sets, truth_sets, rates):
        if not T:
            raise ValidationError(f"visit {t} of patient {pid} has no ground-truth medications")
        out.append(VisitMetrics(pid, t, float(rate), jaccard_atc3(P, T, ctx.registry), f1_atc3(P, T, ctx.registry), len(P)))
    return out


def mean_metrics(visits):
    if not visits:
        return {m: 0.0 for m in METRICS}
    return {m: float(np.mean([getattr(v, m) for v in visits])) for m in METRICS}


def predict_sets(model, patients, threshold=0.5):
    """Recommended set for every visit of every patient, in corpus order."""
    keys, preds, truths = [], [], []
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    try:
        for p in patients:
            if hasattr(model, "predict_patient"):
                probs = model.predict_patient(p)
            else:
                probs = model.visit_probabilities(VisitCodes.from_visits(p.visits))
            probs = probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs)
            for t, v in enumerate(p.visits):
                keys.append((p.pid, t))
                preds.append(threshold_set(probs[t], threshold))
                truths.append(v.medications)
    finally:
        if was_training:
            model.train()
    return keys, preds, truths


def evaluate_split(model, corpus, registry, cid_pairs, threshold=0.5, ctx=None):
    """Per-visit metrics on ``corpus`` and their unweighted visit averages."""
    ctx = ctx or MetricContext(registry, cid_pairs)
    keys, preds, truths = predict_sets(model, corpus.patients, threshold)
    visits = score_sets(preds, truths, ctx, keys)
    return SplitEvaluation(visits, mean_metrics(visits), preds)


class OracleRecommender:
    """Stub that recommends exactly the recorded prescriptions."""

    def __init__(self, n_drugs):
        self.n_drugs = n_drugs

    def predict_patient(self, patient):
        out = np.zeros((len(patient.visits), self.n_drugs))
        for t, v in enumerate(patient.visits):
            out[t, sorted(v.medications)] = 1.0
        return out


# ------------------------------------------------------------------ bootstrap


@dataclass
class Comparison:
    n_repeats: int
    seeds: list[int]
    mean_a: dict
    std_a: dict
    mean_b: dict
    std_b: dict
    t: dict
    p: dict

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _per_patient(visits):
    by_pid = {}
    for v in visits:
        by_pid.setdefault(v.pid, []).append(v)
    return by_pid


def bootstrap_summaries(visits_a, visits_b, n=10, seeds=None):
    """Repeat-level metric means of two aligned per-visit lists under shared
    patient resamples."""
    if n < 2:
        raise ValidationError("bootstrap comparison needs at least two repeats")
    seeds = list(range(n)) if seeds is None else list(seeds)
    if len(seeds) != n:
        raise ValidationError(f"{n} repeats need {n} seeds, got {len(seeds)}")
    a_by, b_by = _per_patient(visits_a), _per_patient(visits_b)
    if list(a_by) != list(b_by):
        raise ValidationError("the two models were evaluated on different patients")
    pids = list(a_by)
    reps_a = np.zeros((n, len(METRICS)))
    reps_b = np.zeros((n, len(METRICS)))
    for r, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        sample = rng.integers(len(pids), size=len(pids))
        va = [v for i in sample for v in a_by[pids[i]]]
        vb = [v for i in sample for v in b_by[pids[i]]]
        ma, mb = mean_metrics(va), mean_metrics(vb)
        reps_a[r] = [ma[m] for m in METRICS]
        reps_b[r] = [mb[m] for m in METRICS]
    return seeds, reps_a, reps_b


def bootstrap_compare(model_a, model_b, corpus, registry, cid_pairs, n=10, seeds=None, threshold=0.5):
    ctx = MetricContext(registry, cid_pairs)
    ev_a = evaluate_split(model_a, corpus, registry, cid_pairs, threshold, ctx)
    ev_b = evaluate_split(model_b, corpus, registry, cid_pairs, threshold, ctx)
    return compare_evaluations(ev_a.visits, ev_b.visits, n, seeds)


def compare_evaluations(visits_a, visits_b, n=10, seeds=None):
    seeds, reps_a, reps_b = bootstrap_summaries(visits_a, visits_b, n, seeds)
    tests = {m: paired_t_test(reps_a[:, k], reps_b[:, k]) for k, m in enumerate(METRICS)}
    col = lambda arr, f: {m: float(f(arr[:, k])) for k, m in enumerate(METRICS)}  # noqa: E731
    return Comparison(
        n_repeats=n,
        seeds=seeds,
        mean_a=col(reps_a, np.mean),
        std_a=col(reps_a, lambda x: np.std(x, ddof=1)),
        mean_b=col(reps_b, np.mean),
        std_b=col(reps_b, lambda x: np.std(x, ddof=1)),
        t={m: tests[m].t for m in METRICS},
        p={m: tests[m].p for m in METRICS},
    )


# ----------------------------------------------------------------- case study


@dataclass
class CaseStudy:
    pid: int
    visit: int
    diagnoses: list[int]
    truth: list[int]
    recommended: list[int]
    truth_pairs: list[tuple[int, int]]
    recommended_pairs: list[tuple[int, int]]
    truth_ddi_rate: float
    recommended_ddi_rate: float
    names: dict = field(repr=False, default_factory=dict)

    def _name(self, d):
        return self.names.get(d, f"drug {d}")

    def _set_line(self, drugs, flagged):
        hot = {d for pair in flagged for d in pair}
        return ", ".join(f"*{self._name(d)}*" if d in hot else self._name(d) for d in drugs) or "(none)"

    def text(self):
        lines = [
            f"Case study: patient {self.pid}, visit {self.visit + 1}",
            f"Diagnoses: {', '.join(str(c) for c in self.diagnoses)}",
            f"Prescribed medications: {self._set_line(self.truth, self.truth_pairs)}",
            f"Recommended medications: {self._set_line(self.recommended, self.recommended_pairs)}",
            "",
            "Interacting pairs (marked with *):",
            f"  prescribed ({len(self.truth_pairs)}):",
        ]
        lines += [f"    {self._name(a)} - {self._name(b)}" for a, b in self.truth_pairs] or ["    none"]
        lines.append(f"  recommended ({len(self.recommended_pairs)}):")
        lines += [f"    {self._name(a)} - {self._name(b)}" for a, b in self.recommended_pairs] or ["    none"]
        lines += [
            "",
            f"DDI rate, prescribed: {self.truth_ddi_rate:.4f}",
            f"DDI rate, recommended: {self.recommended_ddi_rate:.4f}",
        ]
        return "\n".join(lines) + "\n"


def interacting_pairs(drugs, registry, cid_pairs):
    """Drug pairs from ``drugs`` whose compounds interact."""
    out = []
    for a, b in itertools.combinations(sorted(drugs), 2):
        ca, cb = registry.cid(a), registry.cid(b)
        if ca != cb and (min(ca, cb), max(ca, cb)) in cid_pairs:
            out.append((a, b))
    return out


def case_study_report(model, corpus, pid, registry, cid_pairs, threshold=0.5, visit=-1):
    try:
        patient = corpus.patient(pid)
    except KeyError as exc:
        raise ValidationError(f"unknown patient {pid}") from exc
    _, preds, _ = predict_sets(model, [patient], threshold)
    t = visit % len(patient.visits)
    truth = sorted(patient.visits[t].medications)
    rec = sorted(preds[t])
    return CaseStudy(
        pid=pid,
        visit=t,
        diagnoses=list(patient.visits[t].diagnoses),
        truth=truth,
        recommended=rec,
        truth_pairs=interacting_pairs(truth, registry, cid_pairs),
        recommended_pairs=interacting_pairs(rec, registry, cid_pairs),
        truth_ddi_rate=ddi_rate(truth, registry, cid_pairs),
        recommended_ddi_rate=ddi_rate(rec, registry, cid_pairs),
        names={e.drug_id: e.name for e in registry.entries},
    )

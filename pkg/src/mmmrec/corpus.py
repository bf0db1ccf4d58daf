"""EHR corpus, drug registry, interaction and substructure matrices.

On disk a corpus is a directory::

    patients.jsonl      {"pid": int, "visits": [{"dx": [...], "px": [...], "rx": [...]}]}
    registry.csv        drug_id,name,smiles,cid,atc3,substructure_ids
    ddi_cid_pairs.csv   cid_a,cid_b
    vocab.json          {"n_dx", "n_px", "n_drugs", "n_substructures"}
    elf/<drug_id>.elfv  one ELF volume per drug

Interactions are recorded between compound IDs; the drug-level matrix is
derived through the registry.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import MissingFileError, ValidationError

log = logging.getLogger(__name__)

PATIENTS_FILE = "patients.jsonl"
REGISTRY_FILE = "registry.csv"
DDI_FILE = "ddi_cid_pairs.csv"
VOCAB_FILE = "vocab.json"
ELF_DIR = "elf"
FEATURES_FILE = "drug_features.csv"
REGISTRY_HEADER = ["drug_id", "name", "smiles", "cid", "atc3", "substructure_ids"]


@dataclass(frozen=True)
class DrugRegistryEntry:
    drug_id: int
    name: str
    smiles: str
    cid: int
    atc3: str
    substructures: frozenset = frozenset()


@dataclass
class Visit:
    diagnoses: list[int]
    procedures: list[int]
    medications: frozenset

    def __post_init__(self):
        self.medications = frozenset(self.medications)


@dataclass
class Patient:
    pid: int
    visits: list[Visit]


@dataclass(frozen=True)
class VocabSizes:
    n_dx: int
    n_px: int
    n_drugs: int
    n_substructures: int


@dataclass
class EhrCorpus:
    patients: list[Patient]
    vocab: VocabSizes

    def __len__(self):
        return len(self.patients)

    def patient(self, pid):
        for p in self.patients:
            if p.pid == pid:
                return p
        raise KeyError(f"unknown patient {pid}")

    def subset(self, pids):
        by_id = {p.pid: p for p in self.patients}
        return EhrCorpus([by_id[pid] for pid in pids], self.vocab)

    def n_visits(self):
        return sum(len(p.visits) for p in self.patients)


class DrugRegistry:
    """Drug identities indexed by dense ``drug_id``."""

    def __init__(self, entries, n_substructures):
        entries = sorted(entries, key=lambda e: e.drug_id)
        if [e.drug_id for e in entries] != list(range(len(entries))):
            raise ValidationError("drug_id values must be dense and unique starting at 0")
        for e in entries:
            if not e.atc3:
                raise ValidationError(f"drug {e.drug_id} has an empty ATC3 code")
            bad = [s for s in e.substructures if not 0 <= s < n_substructures]
            if bad:
                raise ValidationError(
                    f"drug {e.drug_id} references substructure {min(bad)} outside [0, {n_substructures})"
                )
        self.entries = entries
        self.n_substructures = n_substructures
        self._cid_of = np.array([e.cid for e in entries], dtype=np.int64)
        self.cid_values = np.unique(self._cid_of)
        self.cid_index = np.searchsorted(self.cid_values, self._cid_of)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, drug_id):
        return self.entries[drug_id]

    def cid(self, drug_id):
        return self.entries[drug_id].cid

    def atc3(self, drug_id):
        return self.entries[drug_id].atc3

    def mask_matrix(self):
        H = np.zeros((len(self.entries), self.n_substructures), dtype=np.uint8)
        for e in self.entries:
            H[e.drug_id, list(e.substructures)] = 1
        return H


@dataclass
class DdiMatrix:
    matrix: np.ndarray  # |M| x |M| uint8
    cid_pairs: frozenset = field(default_factory=frozenset)

    @property
    def n_pairs(self):
        return int(np.triu(self.matrix, 1).sum())

    @classmethod
    def from_cid_pairs(cls, cid_pairs, registry):
        pairs = frozenset(normalize_pair(a, b) for a, b in cid_pairs)
        known = set(registry.cid_values.tolist())
        for a, b in pairs:
            if a not in known or b not in known:
                raise ValidationError(f"DDI pair ({a}, {b}) references a CID missing from the registry")
        adj = cid_adjacency(pairs, registry.cid_values)
        idx = registry.cid_index
        matrix = adj[np.ix_(idx, idx)].copy()
        np.fill_diagonal(matrix, 0)
        return cls(matrix, pairs)


def normalize_pair(a, b):
    a, b = int(a), int(b)
    if a == b:
        raise ValidationError(f"self-interaction pair ({a}, {a}) is not allowed")
    return (a, b) if a < b else (b, a)


def cid_adjacency(pairs, cid_values):
    """Dense CID x CID adjacency over the sorted ``cid_values``."""
    cid_values = np.asarray(cid_values)
    adj = np.zeros((len(cid_values), len(cid_values)), dtype=np.uint8)
    if pairs:
        arr = np.array(sorted(pairs), dtype=np.int64)
        i = np.searchsorted(cid_values, arr[:, 0])
        j = np.searchsorted(cid_values, arr[:, 1])
        adj[i, j] = 1
        adj[j, i] = 1
    return adj


class LoadedCorpus(NamedTuple):
    corpus: EhrCorpus
    registry: DrugRegistry
    ddi: DdiMatrix
    mask: np.ndarray


# --------------------------------------------------------------------- reading


def _require(path):
    if not path.exists():
        raise MissingFileError(f"missing corpus file: {path.name} (looked in {path.parent})")
    return path


def read_vocab(path):
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        vocab = VocabSizes(int(raw["n_dx"]), int(raw["n_px"]), int(raw["n_drugs"]), int(raw["n_substructures"]))
    except KeyError as exc:
        raise ValidationError(f"{VOCAB_FILE} lacks key {exc.args[0]!r}") from exc
    if min(vocab.n_dx, vocab.n_px, vocab.n_drugs) < 1 or vocab.n_substructures < 0:
        raise ValidationError(f"{VOCAB_FILE} declares non-positive sizes: {raw}")
    return vocab


def read_registry(path, n_substructures):
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REGISTRY_HEADER:
            raise ValidationError(f"{REGISTRY_FILE} header must be {','.join(REGISTRY_HEADER)}")
        for row in reader:
            try:
                subs = frozenset(int(s) for s in row["substructure_ids"].split(";") if s.strip())
                entries.append(
                    DrugRegistryEntry(int(row["drug_id"]), row["name"], row["smiles"], int(row["cid"]), row["atc3"], subs)
                )
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{REGISTRY_FILE}: bad record {row}") from exc
    return DrugRegistry(entries, n_substructures)


def read_cid_pairs(path):
    pairs = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cid_a", "cid_b"]:
            raise ValidationError(f"{DDI_FILE} header must be cid_a,cid_b")
        for row in reader:
            if not row:
                continue
            try:
                pairs.add(normalize_pair(row[0], row[1]))
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{DDI_FILE}: bad record {row}") from exc
    return frozenset(pairs)


def read_patients(path, vocab):
    patients = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            pid = int(rec["pid"])
            if pid in seen:
                raise ValidationError(f"{PATIENTS_FILE}:{lineno}: duplicate pid {pid}")
            seen.add(pid)
            visits = []
            for v in rec["visits"]:
                dx, px, rx = list(v["dx"]), list(v["px"]), list(v["rx"])
                for name, codes, bound in (("dx", dx, vocab.n_dx), ("px", px, vocab.n_px), ("rx", rx, vocab.n_drugs)):
                    bad = [c for c in codes if not 0 <= c < bound]
                    if bad:
                        raise ValidationError(
                            f"{PATIENTS_FILE}:{lineno}: patient {pid} {name} code {bad[0]} outside [0, {bound})"
                        )
                if not rx:
                    continue
                if not dx:
                    raise ValidationError(f"{PATIENTS_FILE}:{lineno}: patient {pid} has a visit without diagnoses")
                visits.append(Visit(dx, px, frozenset(rx)))
            if not visits:
                log.debug("dropping patient %d: no visits with prescriptions", pid)
                continue
            patients.append(Patient(pid, visits))
    if not patients:
        raise ValidationError(f"{PATIENTS_FILE}: no patients")
    return EhrCorpus(patients, vocab)


def load_corpus(dir_path):
    """Read and cross-validate a corpus directory."""
    d = Path(dir_path)
    if not d.is_dir():
        raise MissingFileError(f"corpus directory not found: {d}")
    vocab = read_vocab(_require(d / VOCAB_FILE))
    registry = read_registry(_require(d / REGISTRY_FILE), vocab.n_substructures)
    if len(registry) != vocab.n_drugs:
        raise ValidationError(f"registry lists {len(registry)} drugs but {VOCAB_FILE} declares {vocab.n_drugs}")
    pairs = read_cid_pairs(_require(d / DDI_FILE))
    corpus = read_patients(_require(d / PATIENTS_FILE), vocab)
    if not (d / ELF_DIR).is_dir() and not (d / FEATURES_FILE).exists():
        raise MissingFileError(f"missing corpus file: {ELF_DIR}/ (looked in {d})")
    ddi = DdiMatrix.from_cid_pairs(pairs, registry)
    return LoadedCorpus(corpus, registry, ddi, registry.mask_matrix())


# --------------------------------------------------------------------- writing


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_corpus(dir_path, corpus, registry, cid_pairs):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    v = corpus.vocab
    (d / VOCAB_FILE).write_text(
        json.dumps({"n_dx": v.n_dx, "n_px": v.n_px, "n_drugs": v.n_drugs, "n_substructures": v.n_substructures})
        + "\n",
        encoding="utf-8",
    )
    rows = [
        [e.drug_id, e.name, e.smiles, e.cid, e.atc3, ";".join(str(s) for s in sorted(e.substructures))]
        for e in registry.entries
    ]
    (d / REGISTRY_FILE).write_text(_csv_text(REGISTRY_HEADER, rows), encoding="utf-8")
    (d / DDI_FILE).write_text(_csv_text(["cid_a", "cid_b"], sorted(cid_pairs)), encoding="utf-8")
    lines = []
    for p in corpus.patients:
        visits = [{"dx": vis.diagnoses, "px": vis.procedures, "rx": sorted(vis.medications)} for vis in p.visits]
        lines.append(json.dumps({"pid": p.pid, "visits": visits}, separators=(",", ":")))
    (d / PATIENTS_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------- splitting


@dataclass
class SplitSpec:
    train: list[int]
    val: list[int]
    test: list[int]
    ratios: tuple[float, float, float]
    seed: int

    def as_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test, "ratios": list(self.ratios), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train"]), list(d["val"]), list(d["test"]), tuple(d["ratios"]), int(d["seed"]))


DEFAULT_RATIOS = (2 / 3, 1 / 6, 1 / 6)


def stratified_split(corpus, ratios=DEFAULT_RATIOS, seed=0, n_buckets=3):
    """Patient-level train/val/test partition stratified by quantile bucket of
    each patient's mean prescription size.

    Patients are ordered by bucket (shuffled within a bucket) and dealt to the
    split with the largest shortfall against its running quota, so each bucket
    and the totals stay within one patient of the requested ratios.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(corpus.patients)
    if n == 0:
        raise ValidationError("cannot split an empty corpus")
    if n < n_buckets:
        raise ValidationError(f"{n} patients cannot fill {n_buckets} strata")
    pids = np.array([p.pid for p in corpus.patients])
    key = np.array([np.mean([len(v.medications) for v in p.visits]) for p in corpus.patients])
    # rank-based quantile buckets are robust to ties in the key
    order = np.lexsort((pids, key))
    bucket = np.empty(n, dtype=int)
    bucket[order] = np.arange(n) * n_buckets // n
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(n)
    sequence = np.lexsort((tiebreak, bucket))
    quota = np.array(ratios)
    counts = np.zeros(3)
    out = ([], [], [])
    for step, idx in enumerate(sequence, 1):
        k = int(np.argmax(quota * step - counts))
        counts[k] += 1
        out[k].append(int(pids[idx]))
    return SplitSpec(sorted(out[0]), sorted(out[1]), sorted(out[2]), ratios, seed)

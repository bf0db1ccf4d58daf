"""Drug inputs for the ELF encoder: patch stacks from ``elf/`` volumes and the
optional precomputed ``drug_features.csv``."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .corpus import ELF_DIR, FEATURES_FILE
from .drug import encode_drug
from .elf import extract_patches, read_elfv
from .errors import MissingFileError, ValidationError

log = logging.getLogger(__name__)


def elf_path(data_dir, drug_id):
    return Path(data_dir) / ELF_DIR / f"{drug_id}.elfv"


def _drug_patches(args):
    path, patch_size, drug_id = args
    if not path.exists():
        raise MissingFileError(f"missing ELF volume: {ELF_DIR}/{path.name}")
    return extract_patches(read_elfv(path), patch_size, drug_id).patches


def load_patch_stack(data_dir, n_drugs, patch_size, workers=1):
    """Patches of every drug as one (n_drugs, n_patches, p, p) array."""
    jobs = [(elf_path(data_dir, i), patch_size, i) for i in range(n_drugs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            stacks = list(pool.map(_drug_patches, jobs))
    else:
        stacks = [_drug_patches(j) for j in jobs]
    counts = {s.shape[0] for s in stacks}
    if len(counts) != 1:
        raise ValidationError(f"ELF volumes yield differing patch counts {sorted(counts)}; use equal grid dims")
    return np.stack(stacks)


@torch.no_grad()
def compute_features(patch_stack, cnn):
    return torch.stack([encode_drug(p, cnn) for p in torch.as_tensor(patch_stack)]).numpy()


def write_features(path, features):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["drug_id"] + [f"f{k}" for k in range(features.shape[1])])
    for i, row in enumerate(np.asarray(features, dtype=np.float64)):
        w.writerow([i] + [repr(v) for v in row.tolist()])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_features(path, n_drugs=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "drug_id":
        raise ValidationError(f"{FEATURES_FILE}: missing drug_id header")
    body = rows[1:]
    ids = [int(r[0]) for r in body]
    if ids != list(range(len(ids))):
        raise ValidationError(f"{FEATURES_FILE}: drug ids must run 0..n-1 in order")
    if n_drugs is not None and len(ids) != n_drugs:
        raise ValidationError(f"{FEATURES_FILE}: {len(ids)} rows for {n_drugs} drugs")
    feats = np.array([[float(v) for v in r[1:]] for r in body])
    if not np.all(np.isfinite(feats)):
        raise ValidationError(f"{FEATURES_FILE}: non-finite feature values")
    return feats


def drug_inputs(data_dir, n_drugs, config, workers=1):
    """``(patches, features)`` for model construction; exactly one is set
    unless the CNN is trainable, which always needs patches."""
    feat_path = Path(data_dir) / FEATURES_FILE
    if config.train_cnn:
        return load_patch_stack(data_dir, n_drugs, config.patch_size, workers), None
    if feat_path.exists():
        log.info("using precomputed drug features from %s", feat_path)
        return None, read_features(feat_path, n_drugs)
    return load_patch_stack(data_dir, n_drugs, config.patch_size, workers), None


def synth_patch_stack(n_drugs, seed, patch_size, dims=None):
    """Patch stack straight from the synthetic ELF generator, skipping files."""
    from .elf import DEFAULT_DIMS, synth_elf

    dims = dims or DEFAULT_DIMS
    return np.stack([extract_patches(synth_elf(i, seed, dims), patch_size, i).patches for i in range(n_drugs)])

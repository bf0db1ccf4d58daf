"""Text checkpoints.

Layout::

    MMMCKPT 1
    meta {"config": ..., "hyper": ..., ...}
    block <name> <dtype> <d1,d2,...>
    <values, one row of the last axis per line>
    ...
    end

Floats are written with ``repr`` so a read reproduces every bit. Derived
buffers (the substructure mask and raw ELF patches) are rebuilt from the
corpus instead of being stored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, MissingFileError, ValidationError
from .model import MMM, ModelConfig

MAGIC = "MMMCKPT"
VERSION = 1
DERIVED = ("bipartite.mask", "drug.patches")

_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict

    @property
    def config(self):
        return ModelConfig.from_dict(self.meta["config"])


def _dtype_name(t):
    for name, dt in _DTYPES.items():
        if t.dtype == dt:
            return name
    raise ValidationError(f"cannot checkpoint tensors of dtype {t.dtype}")


def dumps(state, meta):
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    for name, t in state.items():
        if name in DERIVED:
            continue
        t = t.detach().cpu()
        lines.append(f"block {name} {_dtype_name(t)} {','.join(map(str, t.shape))}")
        rows = t.reshape(-1, t.shape[-1]) if t.ndim else t.reshape(1, 1)
        for row in rows.tolist():
            lines.append(" ".join(map(repr, row)))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save(path, state, meta):
    Path(path).write_text(dumps(state, meta), encoding="utf-8")


def loads(text):
    lines = text.split("\n")
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise FormatError(f"not a version-{VERSION} checkpoint (header {lines[0][:40]!r})")
    if len(lines) < 2 or not lines[1].startswith("meta "):
        raise FormatError("checkpoint is missing its meta line")
    try:
        meta = json.loads(lines[1][5:])
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint meta is not valid JSON: {exc}") from exc
    tensors = {}
    i = 2
    while True:
        if i >= len(lines):
            raise FormatError("checkpoint is truncated (no end marker)")
        head = lines[i].split()
        if head == ["end"]:
            break
        if len(head) != 4 or head[0] != "block" or head[2] not in _DTYPES:
            raise FormatError(f"checkpoint line {i + 1}: malformed block header")
        _, name, dtype, shape_s = head
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        n_rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
        body = lines[i + 1:i + 1 + n_rows]
        if len(body) != n_rows:
            raise FormatError(f"block {name} is truncated")
        try:
            values = [float(v) for row in body for v in row.split()]
        except ValueError as exc:
            raise FormatError(f"block {name} holds a non-numeric value") from exc
        if len(values) != int(np.prod(shape)):
            raise FormatError(f"block {name} has {len(values)} values for shape {shape}")
        tensors[name] = torch.tensor(values, dtype=torch.float64).to(_DTYPES[dtype]).reshape(shape)
        i += 1 + n_rows
    return Checkpoint(meta, tensors)


def load(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"checkpoint not found: {path}")
    return loads(path.read_text(encoding="utf-8"))


def build_model(ckpt, vocab, mask, patches=None):
    """Rebuild the model stored in ``ckpt`` against a loaded corpus."""
    meta = ckpt.meta
    got = vocab_meta(vocab)
    if meta.get("vocab") != got:
        raise ValidationError(f"checkpoint vocabulary {meta.get('vocab')} does not match the corpus {got}")
    config = ckpt.config
    features = ckpt.tensors.get("drug.features")
    if features is None and patches is None:
        raise ValidationError("this checkpoint needs the corpus ELF volumes to rebuild its drug inputs")
    model = MMM(config, vocab, mask, drug_patches=patches if features is None else None, drug_features=features,
                drop=meta.get("drop"), seed=meta.get("seed", 0))
    dtypes = {t.dtype for t in ckpt.tensors.values() if t.is_floating_point()}
    if len(dtypes) == 1:
        model = model.to(dtypes.pop())
    missing, unexpected = model.load_state_dict(ckpt.tensors, strict=False)
    missing = [k for k in missing if k not in DERIVED]
    if missing or unexpected:
        raise FormatError(f"checkpoint blocks do not match the model (missing {missing}, unexpected {unexpected})")
    return model


def vocab_meta(vocab):
    return {k: getattr(vocab, k) for k in ("n_dx", "n_px", "n_drugs", "n_substructures")}

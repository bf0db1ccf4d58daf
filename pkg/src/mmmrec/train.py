"""Training: one Adam step per visit over a fixed patient order, with the
checkpoint chosen by validation DDI rate."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .errors import NumericAbort, ValidationError
from .evaluate import METRICS, MetricContext, evaluate_split
from .losses import combine, loss_bce, loss_ddi, loss_multi
from .model import ModelConfig
from .patient import VisitCodes


@dataclass
class HyperParams:
    alpha: float = 0.95
    beta: float = 0.9
    lr: float = 5e-5
    epochs: int = 30
    threshold: float = 0.5
    seed: int = 0
    batch_visits: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_visits < 1:
            raise ValidationError(f"batch_visits must be at least 1, got {self.batch_visits}")

    def as_dict(self):
        return asdict(self)


# ------------------------------------------------------------------- config


def _parse_value(raw, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if kind == "channels":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if kind == "optional_int":
        return None if raw.lower() in ("none", "") else int(raw)
    return kind(raw)


_HP_KINDS = {"alpha": float, "beta": float, "lr": float, "epochs": int, "threshold": float, "seed": int,
             "batch_visits": int}
_MODEL_KINDS = {"emb_dim": int, "dim": int, "feat_dim": int, "mlp_hidden": "optional_int", "patch_size": int,
                "cnn_channels": "channels", "train_cnn": bool, "rnn_cell": str}


def parse_config(text):
    """``key = value`` lines (``#`` comments) into ``(ModelConfig, HyperParams)``
    keyword dicts."""
    model_kw, hp_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in _HP_KINDS:
            target, kind = hp_kw, _HP_KINDS[key]
        elif key in _MODEL_KINDS:
            target, kind = model_kw, _MODEL_KINDS[key]
        else:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        try:
            target[key] = _parse_value(value, kind)
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: bad value {value!r} for {key}") from exc
    return model_kw, hp_kw


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_text(config: ModelConfig, hp: HyperParams):
    lines = []
    for f in fields(hp):
        lines.append(f"{f.name} = {getattr(hp, f.name)}")
    for f in fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {' '.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ training


@dataclass
class PreparedPatient:
    pid: int
    codes: VisitCodes
    targets: torch.Tensor  # (n_visits, n_drugs) multi-hot


def prepare(corpus, n_drugs, dtype=None):
    dtype = dtype or torch.get_default_dtype()
    out = []
    for p in corpus.patients:
        y = torch.zeros(len(p.visits), n_drugs, dtype=dtype)
        for t, v in enumerate(p.visits):
            y[t, sorted(v.medications)] = 1.0
        out.append(PreparedPatient(p.pid, VisitCodes.from_visits(p.visits), y))
    return out


@dataclass
class VisitLoss:
    pid: int
    visit: int
    bce: float
    multi: float
    ddi: float
    total: float


def make_optimizer(model, lr):
    return torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=lr)


def _check_finite(model, pid, t):
    for name, p in model.named_parameters():
        if p.requires_grad and not bool(torch.isfinite(p).all()):
            raise NumericAbort(f"parameter {name} became non-finite after patient {pid}, visit {t}")


def train_epoch(model, optimizer, patients, hp, D):
    """One pass over ``patients`` in order, visit by visit.

    Returns the per-visit losses. With ``batch_visits > 1`` gradients of that
    many consecutive visits are averaged before each step.
    """
    model.train()
    D = torch.as_tensor(D, dtype=next(model.parameters()).dtype)
    record = []
    pending = 0
    optimizer.zero_grad()
    for p in patients:
        for t in range(1, p.codes.n_visits + 1):
            o = model(p.codes.prefix(t))["o_hat"]
            y = p.targets[t - 1]
            l_bce, l_multi, l_ddi = loss_bce(o, y), loss_multi(o, y), loss_ddi(o, D)
            loss = combine(l_bce, l_multi, l_ddi, hp.alpha, hp.beta)
            if not bool(torch.isfinite(loss)):
                raise NumericAbort(f"non-finite loss at patient {p.pid}, visit {t}")
            (loss / hp.batch_visits).backward()
            pending += 1
            record.append(VisitLoss(p.pid, t, l_bce.item(), l_multi.item(), l_ddi.item(), loss.item()))
            if pending == hp.batch_visits:
                optimizer.step()
                optimizer.zero_grad()
                pending = 0
                _check_finite(model, p.pid, t)
    if pending:
        optimizer.step()
        optimizer.zero_grad()
        _check_finite(model, record[-1].pid, record[-1].visit)
    return record


@dataclass
class EpochRecord:
    epoch: int
    l_bce: float
    l_multi: float
    l_ddi: float
    l_total: float
    val: dict


@dataclass
class FitResult:
    best_epoch: int
    best_state: dict
    final_state: dict
    trace: list[EpochRecord] = field(default_factory=list)

    @property
    def best_val(self):
        return self.trace[self.best_epoch - 1].val

    def log_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "l_bce", "l_multi", "l_ddi", "l_total", *(f"val_{m}" for m in METRICS)])
        for r in self.trace:
            w.writerow([r.epoch, repr(r.l_bce), repr(r.l_multi), repr(r.l_ddi), repr(r.l_total),
                        *(repr(r.val[m]) for m in METRICS)])
        return buf.getvalue()


def snapshot(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _mean(xs):
    return float(np.mean(xs)) if xs else math.nan


def fit(model, train, val, registry, cid_pairs, D, hp, on_epoch=None):
    """Train for ``hp.epochs`` epochs and keep the epoch with the lowest
    validation DDI rate (first one on ties)."""
    if hp.epochs < 1:
        raise ValidationError("fit needs at least one epoch")
    torch.manual_seed(hp.seed)
    patients = prepare(train, model.n_drugs, next(model.parameters()).dtype)
    optimizer = make_optimizer(model, hp.lr)
    ctx = MetricContext(registry, cid_pairs)
    trace = []
    best_epoch, best_rate, best_state = 0, math.inf, None
    for epoch in range(1, hp.epochs + 1):
        losses = train_epoch(model, optimizer, patients, hp, D)
        means = evaluate_split(model, val, registry, cid_pairs, hp.threshold, ctx).means
        rec = EpochRecord(epoch, _mean([v.bce for v in losses]), _mean([v.multi for v in losses]),
                          _mean([v.ddi for v in losses]), _mean([v.total for v in losses]), means)
        trace.append(rec)
        if means["ddi_rate"] < best_rate:
            best_epoch, best_rate, best_state = epoch, means["ddi_rate"], snapshot(model)
        if on_epoch is not None:
            on_epoch(rec)
    return FitResult(best_epoch, best_state, snapshot(model), trace)

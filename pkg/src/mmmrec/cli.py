"""``mmmrec`` command line.

Exit codes: 0 success, 2 invalid input or missing files, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import torch

from . import __version__, checkpoint
from .corpus import ELF_DIR, FEATURES_FILE, SplitSpec, load_corpus, stratified_split
from .elf import DEFAULT_DIMS, SLICE_SPACING, synth_elf, write_elfv
from .errors import MMMError, NumericAbort, ValidationError
from .evaluate import (METRICS, MetricContext, OracleRecommender, case_study_report, compare_evaluations,
                       evaluate_split)
from .features import compute_features, drug_inputs, load_patch_stack, write_features
from .model import MMM, ModelConfig, build_cnn
from .synth import SynthSpec, corpus_statistics, synth_corpus
from .train import HyperParams, fit, load_config

log = logging.getLogger("mmmrec")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
ELF_PRECISION = 6
VARIANTS = (("full", None), ("w/o ELF", "elf"), ("w/o bipartite", "bipartite"))


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------- synth


def _write_volume(job):
    path, drug_id, seed, dims = job
    write_elfv(path, synth_elf(drug_id, seed, dims, SLICE_SPACING), precision=ELF_PRECISION)


def cmd_synth(args):
    spec = SynthSpec(n_patients=args.n_patients, seed=args.seed)
    out = _out_dir(args.out)
    corpus, registry, _ = synth_corpus(spec, out)
    elf_dir = out / ELF_DIR
    elf_dir.mkdir(exist_ok=True)
    dims = tuple(args.grid)
    jobs = [(elf_dir / f"{i}.elfv", i, args.seed, dims) for i in range(len(registry))]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            list(pool.map(_write_volume, jobs))
    else:
        for job in jobs:
            _write_volume(job)
    stats = corpus_statistics(corpus)
    _dump_json(out / "synth.json", {"seed": args.seed, "n_patients": args.n_patients, "grid": list(dims),
                                   "elf_precision": ELF_PRECISION, "statistics": stats})
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ featurize


def cmd_featurize(args):
    config, _ = _configs(args)
    data = load_corpus(args.data)
    stack = load_patch_stack(args.data, len(data.registry), config.patch_size, args.workers)
    feats = compute_features(stack, build_cnn(config, args.seed))
    write_features(Path(args.data) / FEATURES_FILE, feats)
    _dump_json(Path(args.data) / "featurize.json", {"seed": args.seed, "config": config.as_dict(),
                                                    "n_drugs": int(feats.shape[0]), "feat_dim": int(feats.shape[1])})
    return EXIT_OK


# ---------------------------------------------------------------------- train


def _configs(args):
    model_kw, hp_kw = load_config(args.config) if getattr(args, "config", None) else ({}, {})
    for key in ("alpha", "beta", "threshold", "epochs", "lr", "batch_visits"):
        value = getattr(args, key, None)
        if value is not None:
            hp_kw[key] = value
    if getattr(args, "seed", None) is not None:
        hp_kw["seed"] = args.seed
    return ModelConfig(**model_kw), HyperParams(**hp_kw)


def param_checksum(model, prefixes):
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        if name.startswith(prefixes):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


DRUG_BLOCKS = ("drug.cnn.", "drug.mlp.")


def _train_one(data, args, config, hp, drop, out, stem):
    split = stratified_split(data.corpus, seed=hp.seed)
    patches, features = drug_inputs(args.data, len(data.registry), config, args.workers)
    model = MMM(config, data.corpus.vocab, data.mask, drug_patches=patches, drug_features=features, drop=drop,
                seed=hp.seed)
    init_sum = param_checksum(model, DRUG_BLOCKS)

    def report(rec):
        log.info("epoch %d  loss %.5f  val ddi %.4f  jaccard %.4f", rec.epoch, rec.l_total, rec.val["ddi_rate"],
                 rec.val["jaccard"])

    result = fit(model, data.corpus.subset(split.train), data.corpus.subset(split.val), data.registry,
                 data.ddi.cid_pairs, data.ddi.matrix, hp, on_epoch=report)
    meta = {"config": config.as_dict(), "hyper": hp.as_dict(), "drop": drop, "seed": hp.seed,
            "vocab": checkpoint.vocab_meta(data.corpus.vocab), "split": split.as_dict()}
    checkpoint.save(out / f"{stem}.ckpt", result.best_state, {**meta, "epoch": result.best_epoch})
    checkpoint.save(out / f"{stem}_final.ckpt", result.final_state, {**meta, "epoch": hp.epochs})
    (out / f"{stem}_log.csv").write_text(result.log_csv(), encoding="utf-8")
    model.load_state_dict(result.final_state)
    final_sum = param_checksum(model, DRUG_BLOCKS)
    summary = {"seed": hp.seed, "drop": drop, "best_epoch": result.best_epoch, "best_val": result.best_val,
               "final_val": result.trace[-1].val, "drug_block_checksum": {"init": init_sum, "final": final_sum}}
    _dump_json(out / f"{stem}_summary.json", summary)
    return model, result, split, summary


def cmd_train(args):
    config, hp = _configs(args)
    data = load_corpus(args.data)
    out = _out_dir(args.out)
    _, result, _, _ = _train_one(data, args, config, hp, args.drop, out, "model")
    print(f"best epoch {result.best_epoch}: validation DDI rate {result.best_val['ddi_rate']:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------------- eval


def _load_model(path, data, args):
    ckpt = checkpoint.load(path)
    patches = None
    if "drug.features" not in ckpt.tensors:
        patches = load_patch_stack(args.data, len(data.registry), ckpt.config.patch_size, args.workers)
    return ckpt, checkpoint.build_model(ckpt, data.corpus.vocab, data.mask, patches)


def _split_corpus(data, ckpt_meta, which, seed):
    if which == "all":
        return data.corpus
    split = SplitSpec.from_dict(ckpt_meta["split"]) if ckpt_meta else stratified_split(data.corpus, seed=seed)
    return data.corpus.subset(getattr(split, which))


def cmd_eval(args):
    data = load_corpus(args.data)
    out = _out_dir(args.out)
    if args.oracle:
        model, meta = OracleRecommender(len(data.registry)), None
    else:
        if not args.checkpoint:
            raise ValidationError("eval needs --checkpoint (or --oracle)")
        ckpt, model = _load_model(args.checkpoint, data, args)
        meta = ckpt.meta
    threshold = args.threshold if args.threshold is not None else (meta["hyper"]["threshold"] if meta else 0.5)
    subset = _split_corpus(data, meta, args.split, args.seed)
    ev = evaluate_split(model, subset, data.registry, data.ddi.cid_pairs, threshold)
    (out / "metrics.csv").write_text(ev.metrics_csv(), encoding="utf-8")
    _dump_json(out / "summary.json", {"split": args.split, "threshold": threshold, "n_visits": len(ev.visits),
                                      "seed": meta["seed"] if meta else args.seed, "means": ev.means})
    print(json.dumps(ev.means, sort_keys=True))
    return EXIT_OK


def bootstrap_seeds(seed, repeats):
    return [seed + r for r in range(repeats)]


def cmd_compare(args):
    data = load_corpus(args.data)
    out = _out_dir(args.out)
    ckpt_a, model_a = _load_model(args.a, data, args)
    _, model_b = _load_model(args.b, data, args)
    threshold = args.threshold if args.threshold is not None else ckpt_a.meta["hyper"]["threshold"]
    subset = _split_corpus(data, ckpt_a.meta, args.split, args.seed)
    ctx = MetricContext(data.registry, data.ddi.cid_pairs)
    ev_a = evaluate_split(model_a, subset, data.registry, data.ddi.cid_pairs, threshold, ctx)
    ev_b = evaluate_split(model_b, subset, data.registry, data.ddi.cid_pairs, threshold, ctx)
    cmp = compare_evaluations(ev_a.visits, ev_b.visits, args.repeats, bootstrap_seeds(args.seed, args.repeats))
    summary = {"a": str(args.a), "b": str(args.b), "split": args.split, "threshold": threshold, **asdict(cmp)}
    _dump_json(out / "summary.json", summary)
    print(json.dumps({"p": cmp.p}, sort_keys=True))
    return EXIT_OK


def cmd_case(args):
    data = load_corpus(args.data)
    ckpt, model = _load_model(args.checkpoint, data, args)
    threshold = args.threshold if args.threshold is not None else ckpt.meta["hyper"]["threshold"]
    report = case_study_report(model, data.corpus, args.patient, data.registry, data.ddi.cid_pairs, threshold,
                               args.visit)
    text = f"# checkpoint seed {ckpt.meta['seed']}, threshold {threshold}\n" + report.text()
    if args.out:
        out = _out_dir(args.out)
        (out / f"case_{args.patient}.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------- ablate


def ablation_table(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", *METRICS])
    for name, means in rows:
        w.writerow([name, *(f"{means[m]:.4f}" for m in METRICS)])
    return buf.getvalue()


def cmd_ablate(args):
    config, hp = _configs(args)
    data = load_corpus(args.data)
    out = _out_dir(args.out)
    rows, details = [], {}
    for name, drop in VARIANTS:
        stem = "full" if drop is None else f"drop_{drop}"
        model, _, split, summary = _train_one(data, args, config, hp, drop, out, stem)
        ckpt = checkpoint.load(out / f"{stem}.ckpt")
        best = checkpoint.build_model(ckpt, data.corpus.vocab, data.mask, getattr(model.drug, "patches", None))
        ev = evaluate_split(best, data.corpus.subset(split.test), data.registry, data.ddi.cid_pairs, hp.threshold)
        rows.append((name, ev.means))
        details[name] = {**summary, "test": ev.means,
                         "drug_blocks_unchanged": summary["drug_block_checksum"]["init"]
                         == summary["drug_block_checksum"]["final"]}
    table = ablation_table(rows)
    (out / "ablation.csv").write_text(table, encoding="utf-8")
    _dump_json(out / "ablation.json", {"seed": hp.seed, "variants": details})
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def _grid(text):
    dims = tuple(int(x) for x in text.replace("x", ",").split(","))
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"grid must be three positive integers, got {text!r}")
    return dims


def build_parser():
    parser = argparse.ArgumentParser(prog="mmmrec", description="ELF + substructure drug-combination recommender")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out=True, seed=0):
        if data:
            p.add_argument("--data", required=True, help="corpus directory")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=seed)
        p.add_argument("--workers", type=int, default=1, help="processes for per-drug work")

    def hyper(p):
        p.add_argument("--config", help="key = value file of model and training settings")
        p.add_argument("--epochs", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--threshold", type=float)
        p.add_argument("--batch-visits", type=int, help="visits per optimizer step (default 1)")

    p = sub.add_parser("synth", help="write a synthetic corpus with ELF volumes")
    common(p, data=False, seed=1)
    p.add_argument("--n-patients", type=int, default=600)
    p.add_argument("--grid", type=_grid, default=DEFAULT_DIMS, help="voxels nx,ny,nz (default 64,64,8)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="precompute drug_features.csv with the frozen CNN")
    common(p, out=False)
    p.add_argument("--config")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit a model, keeping the lowest validation DDI epoch")
    common(p)
    hyper(p)
    p.add_argument("--drop", choices=("elf", "bipartite"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-visit metrics of a checkpoint")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="score the recorded prescriptions instead of a model")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="bootstrap paired t-tests between two checkpoints")
    common(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("case-study", help="report one patient's prescriptions and recommendations")
    common(p, out=False)
    p.add_argument("--out")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--patient", type=int, required=True)
    p.add_argument("--visit", type=int, default=-1)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_case)

    p = sub.add_parser("ablate", help="train full, w/o ELF and w/o bipartite models and tabulate test metrics")
    common(p)
    hyper(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)  # bit-stable reductions across runs
    try:
        return args.func(args)
    except NumericAbort as exc:
        print(f"mmmrec: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MMMError, ValueError, FileNotFoundError) as exc:
        print(f"mmmrec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

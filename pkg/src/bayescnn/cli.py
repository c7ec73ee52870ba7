"""Command-line interface: synth, train, eval, predict, triage, bands, embed."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import LoadReport, export_patches, load_patches, split, synth_generate
from .errors import BayesCNNError, CheckpointError, InputError, NumericError
from .metrics import confusion, report
from .network import BayesianNetwork, preset
from .training import config_dict, predict_classes, train
from .triage import band_of, band_partition, default_grid, sweep
from .tsne import TSNEParams, tsne_fit
from .uncertainty import normalize_epistemic, read_records, uncertainty_records, write_records

logger = logging.getLogger("bayescnn")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _load_cfg(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _splits_for(data_dir, split_seed):
    report_ = LoadReport()
    items = load_patches(data_dir, report_)
    if report_.skipped:
        logger.warning("skipped %d undecodable files", len(report_.skipped))
    return split(items, split_seed)


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    images = synth_generate(args.n, args.size, args.seed, args.label_noise)
    export_patches(images, args.out)
    print(json.dumps({"images": len(images), "out": str(args.out)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    if args.arch:
        cfg.arch = args.arch
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    data = args.data or cfg.data
    out = args.out or cfg.out
    if not data or not out:
        raise InputError("train needs --data and --out")
    split_seed = cfg.split_seed if cfg.split_seed is not None else cfg.seed
    splits = _splits_for(data, split_seed)
    input_shape = splits.train[0].pixels.shape
    spec = preset(cfg.arch, input_shape, padding=cfg.padding, pool_after=cfg.pool_positions())
    tcfg = cfg.training_config()
    model = BayesianNetwork(spec, cfg.prior_obj(), rng=np.random.default_rng(cfg.seed))
    model, trace = train(model, splits, tcfg)
    trace_path = args.trace or cfg.trace or str(Path(out).with_suffix(".trace.csv"))
    trace.write_csv(trace_path)
    save_checkpoint(
        Checkpoint(model, config_dict(tcfg), cfg.seed, split_seed, {"mc_samples": cfg.mc_samples}),
        out,
    )
    best = trace.records[trace.best_epoch - 1]
    print(json.dumps({"checkpoint": str(out), "trace": trace_path, "epochs_run": len(trace),
                      "best_epoch": trace.best_epoch, "val_accuracy": best.val_accuracy,
                      "train_accuracy": best.train_accuracy}))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    items = _splits_for(args.data, ckpt.split_seed).get(args.split)
    x = np.stack([it.pixels for it in items])
    y = np.array([it.label for it in items])
    rng = np.random.default_rng(args.seed)
    pred = predict_classes(ckpt.model, x, n_samples=args.n, rng=rng)
    out = report(confusion(pred, y))
    print(json.dumps(out))
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.model)
    items = _splits_for(args.data, ckpt.split_seed).get(args.split)
    n = args.n if args.n is not None else ckpt.extra.get("mc_samples", 25)
    records = uncertainty_records(ckpt.model, items, n, np.random.default_rng(args.seed))
    write_records(records, args.out)
    print(json.dumps({"records": len(records), "out": str(args.out), "mc_samples": n}))
    return EXIT_OK


def cmd_triage(args) -> int:
    records = read_records(args.records)
    if args.thresholds:
        grid = [float(t) for t in args.thresholds.split(",")]
    else:
        grid = default_grid(records, args.field, args.grid)
    curve = sweep(records, grid, args.field)
    curve.write_csv(args.out)
    first, last = curve.rows[0], curve.rows[-1]
    print(json.dumps({"rows": len(curve.rows), "out": str(args.out),
                      "first_retained": first.retained_fraction, "last_retained": last.retained_fraction}))
    return EXIT_OK


def _records_with_e(path):
    records = read_records(path)
    if any(r.E is None for r in records):
        normalize_epistemic(records)
    return records


def cmd_bands(args) -> int:
    records = _records_with_e(args.records)
    low, medium, high = band_partition(records)
    summary = {}
    for name, subset in (("low", low), ("medium", medium), ("high", high)):
        labelled = [r for r in subset if r.label is not None]
        acc = None
        if labelled:
            acc = sum(r.pred == r.label for r in labelled) / len(labelled)
        summary[name] = {"count": len(subset), "accuracy": acc}
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "E", "band"])
            for r in records:
                w.writerow([r.id, format(r.E, ".17g"), band_of(r.E)])
    print(json.dumps(summary))
    return EXIT_OK


def _read_feature_csv(path):
    ids, rows, labels, es = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        meta = {"id", "label", "E"}
        feat_cols = [i for i, h in enumerate(header) if h not in meta]
        col = {h: i for i, h in enumerate(header)}
        for k, row in enumerate(reader):
            ids.append(row[col["id"]] if "id" in col else str(k))
            labels.append(row[col["label"]] if "label" in col else "")
            es.append(float(row[col["E"]]) if "E" in col and row[col["E"]] != "" else None)
            rows.append([float(row[i]) for i in feat_cols])
    return ids, np.array(rows, dtype=np.float64), labels, es


def cmd_embed(args) -> int:
    if args.features:
        ids, X, labels, es = _read_feature_csv(args.features)
    else:
        if args.model:
            split_seed = load_checkpoint(args.model).split_seed
        else:
            split_seed = args.split_seed
        items = _splits_for(args.data, split_seed).get(args.split) if args.split != "all" else load_patches(args.data)
        ids = [it.id for it in items]
        X = np.stack([it.pixels.reshape(-1) for it in items])
        labels = [str(it.label) for it in items]
        es = [None] * len(ids)
    if args.records:
        by_id = {r.id: r.E for r in _records_with_e(args.records)}
        es = [by_id.get(i, e) for i, e in zip(ids, es)]
    params = TSNEParams(
        perplexity=args.perplexity,
        iterations=args.iterations,
        learning_rate=args.learning_rate if args.learning_rate == "auto" else float(args.learning_rate),
        seed=args.seed,
    )
    emb = tsne_fit(X, params)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "y1", "y2", "y3", "label", "band"])
        for i, y, lab, e in zip(ids, emb.Y, labels, es):
            w.writerow([i, *(format(v, ".17g") for v in y), lab, "" if e is None else band_of(e)])
    print(json.dumps({"points": len(ids), "out": str(args.out), "final_kl": emb.kl_trace[-1]}))
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bayescnn", description="Variational Bayesian CNN toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic patch dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=500, help="images per class")
    s.add_argument("--size", type=int, default=16)
    s.add_argument("--label-noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a Bayesian CNN")
    s.add_argument("--data")
    s.add_argument("--arch", choices=["bayesian_cnn", "modified_bayesian_cnn"])
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--trace")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="classification metrics as JSON")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "validation", "test"])
    s.add_argument("--n", type=int, default=0, help="MC samples (0: posterior means)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="per-image uncertainty records")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "validation", "test"])
    s.add_argument("--n", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("triage", help="threshold sweep over uncertainty records")
    s.add_argument("--records", required=True)
    s.add_argument("--field", default="aleatoric", choices=["aleatoric", "epistemic", "E"])
    s.add_argument("--grid", type=int, default=50)
    s.add_argument("--thresholds", help="comma-separated ascending thresholds (overrides --grid)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_triage)

    s = sub.add_parser("bands", help="low / medium / high epistemic bands")
    s.add_argument("--records", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bands)

    s = sub.add_parser("embed", help="t-SNE projection to 3-D")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--features")
    s.add_argument("--model", help="checkpoint whose split seed selects --split")
    s.add_argument("--split", default="test", choices=["train", "validation", "test", "all"])
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--records", help="uncertainty records supplying E for the band column")
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iterations", type=int, default=1000)
    s.add_argument("--learning-rate", default="auto")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_embed)
    return p


def _thread_limit():
    cap = os.environ.get("BVAR_THREADS")
    if not cap:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(cap))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (NumericError, CheckpointError) as exc:
        print(f"bayescnn: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BayesCNNError, FileNotFoundError) as exc:
        print(f"bayescnn: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

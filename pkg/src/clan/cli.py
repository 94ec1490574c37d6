"""Command-line interface.

Every subcommand also reads a flat ``key=value`` file given with
``--config``; keys are option names (``batch-size`` or ``batch_size``)
and explicit flags override them.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time

import numpy as np

from . import numerics
from .augmentation import AugmentConfig
from .bench import benchmark_inference, format_bench
from .errors import ClanError, ContractError, DataError, UsageError
from .inference import compute_centroid, encode, knn_baseline_score, load_centroid, save_centroid, score
from .loss import LossConfig
from .metrics import lycos_holdout_names, macro_f1, per_class_auroc
from .model import MlpConfig, read_checkpoint, save_checkpoint
from .pipeline import (
    align_classes,
    apply_scaler,
    benign_only,
    fit_scaler,
    load_csv,
    stratified_split,
    write_csv,
)
from .synthetic import SIGMA, generate_synthetic
from .trainer import FinetuneConfig, TrainConfig, finetune_runs, pretrain, write_loss_history

log = logging.getLogger("clan")

SCORE_COLUMNS = ("row", "label", "distance", "prob_benign", "predicted")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text):
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config_file(path):
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _data_args(p, data_help="flow CSV"):
    p.add_argument("--data", required=True, help=data_help)
    p.add_argument("--label-column", default="label")
    p.add_argument("--benign-label", default="BENIGN")
    p.add_argument("--drop-columns", type=_csv_list, default=[], help="comma-separated columns to ignore")


def build_parser():
    parser = _Parser(prog="clan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic flow CSV")
    p.add_argument("--benign", type=int, default=1000)
    p.add_argument("--malicious", type=int, default=200)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--classes", type=int, default=3, help="number of attack classes")
    p.add_argument("--sigma", type=float, default=SIGMA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("split", help="stratified train/test split with held-out classes")
    _data_args(p)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--holdout", type=_csv_list, default=[], help="class names kept out of train")
    p.add_argument("--lycos-holdout", action="store_true",
                   help="hold out the Heartbleed and SQL injection classes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)

    p = sub.add_parser("pretrain", help="contrastive pretraining on the benign rows of a CSV")
    _data_args(p, "training CSV; only benign rows are used")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="per-epoch loss history")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--warmup-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=("clan", "ntxent_baseline"), default="clan")
    p.add_argument("--metric", choices=numerics.METRICS, default="cosine")
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--p-resample", type=float, default=0.5)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--d-model", type=int, default=256)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--d-head", type=int, default=32)

    p = sub.add_parser("centroid", help="cache the benign latent centroid")
    _data_args(p, "CSV whose benign rows define the centroid (normally the training CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=numerics.METRICS, default="cosine")
    p.add_argument("--quantile", type=float, default=0.99,
                   help="benign distance quantile mapped to probability 0.5")
    p.add_argument("--z", type=float, help="fixed partition constant (skips calibration)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="score rows against a cached centroid or by nearest neighbour")
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--centroid", help="centroid cache (method=centroid)")
    p.add_argument("--metric", choices=numerics.METRICS, help="must match the centroid's metric")
    p.add_argument("--method", choices=("centroid", "knn"), default="centroid")
    p.add_argument("--train-data", help="training CSV whose benign rows form the knn base set")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-binary", help="per-class AUROC report from a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--benign-label", default="BENIGN")
    p.add_argument("--out", help="report CSV")

    p = sub.add_parser("finetune", help="low-shot fine-tuning with a linear head")
    _data_args(p, "labelled training CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="labelled test CSV")
    p.add_argument("--samples-per-class", type=int, default=8)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-6)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--seeds", type=_int_list, default=list(range(10)))
    p.add_argument("--out", help="checkpoint with the first seed's encoder and head")
    p.add_argument("--report", help="per-seed macro-F1 CSV")

    p = sub.add_parser("bench-inference", help="centroid vs nearest-neighbour inference timing")
    p.add_argument("--sizes", type=_int_list, default=[1_000, 10_000, 100_000])
    p.add_argument("--queries", type=int, default=256)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--metric", choices=numerics.METRICS, default="cosine")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timing CSV")

    for action in sub.choices.values():
        action.add_argument("--config", help="flat key=value file of option defaults")
    return parser


def _find_config(argv):
    command, config = None, None
    for i, tok in enumerate(argv):
        if command is None and tok in COMMANDS:
            command = tok
        elif tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def _apply_config(parser, argv):
    """Parse ``argv``, using the subcommand's ``--config`` file as defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    command, path = _find_config(argv)
    if command is None or path is None:
        return parser.parse_args(argv)
    values = read_config_file(path)
    subparser = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in subparser._actions}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"{path}: unknown option {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            value = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                value = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}: bad value for {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {list(action.choices)}")
        action.default = value
        action.required = False
    return parser.parse_args(argv)


def _load(args, path=None, class_names=None):
    return load_csv(path or args.data, args.label_column, args.benign_label,
                    args.drop_columns, class_names)


def cmd_synth(args):
    ds = generate_synthetic(args.benign, args.malicious, args.features, args.seed,
                            n_attack_classes=args.classes, sigma=args.sigma)
    write_csv(ds, args.out)
    print(f"wrote {len(ds)} rows ({args.benign} benign) to {args.out}")


def cmd_split(args):
    ds = _load(args)
    holdout = list(args.holdout)
    if args.lycos_holdout:
        holdout += [n for n in lycos_holdout_names(ds.class_names) if n not in holdout]
    train, test = stratified_split(ds, args.train_fraction, holdout, args.seed)
    write_csv(train, args.train_out, args.label_column)
    write_csv(test, args.test_out, args.label_column)
    print(f"train {len(train)} rows, test {len(test)} rows; held out: {', '.join(holdout) or 'none'}")


def cmd_pretrain(args):
    ds = benign_only(_load(args))
    if len(ds) == 0:
        raise DataError(f"{args.data}: no benign rows labelled {args.benign_label!r}")
    scaler = fit_scaler(ds.features)
    ds = ds.with_features(apply_scaler(scaler, ds.features))
    mlp = MlpConfig(ds.n_features, args.d_model, args.depth, args.d_head, args.seed)
    train = TrainConfig(args.epochs, args.batch_size, args.lr, args.weight_decay,
                        args.warmup_fraction, args.seed, args.loss)
    aug = AugmentConfig(args.p_resample, args.b, args.seed)
    loss = LossConfig(args.metric, args.margin, args.temperature)
    t0 = time.perf_counter()
    params, history = pretrain(ds, mlp, train, aug, loss)
    save_checkpoint(params, mlp, args.out, scaler=scaler)
    if args.loss_csv:
        write_loss_history(history, args.loss_csv)
    final = f"final loss {history[-1].mean_loss:.6f}, " if history else ""
    print(f"pretrained on {len(ds)} benign rows for {args.epochs} epochs "
          f"({final}{time.perf_counter() - t0:.1f}s); checkpoint {args.out}")


def _scaled(ckpt, ds):
    if ckpt.scaler is None:
        raise ContractError("checkpoint carries no scaler; re-run pretrain")
    return ds.with_features(apply_scaler(ckpt.scaler, ds.features))


def cmd_centroid(args):
    ckpt = read_checkpoint(args.checkpoint)
    ds = _scaled(ckpt, benign_only(_load(args)))
    centroid = compute_centroid(ckpt.params, ds, args.metric, args.quantile, args.z, ckpt.scaler)
    save_centroid(centroid, args.out)
    print(f"centroid over {len(ds)} benign rows ({args.metric}), Z={centroid.partition_constant:.6g}; "
          f"wrote {args.out}")


def cmd_score(args):
    ckpt = read_checkpoint(args.checkpoint)
    ds = _load(args)
    names = np.asarray(ds.class_names, dtype=object)[ds.labels]
    if args.method == "centroid":
        if not args.centroid:
            raise UsageError("score --method centroid needs --centroid")
        centroid = load_centroid(args.centroid)
        if args.metric is not None and args.metric != centroid.metric:
            raise ContractError(f"metric mismatch: centroid was cached with {centroid.metric!r}, "
                                f"--metric requested {args.metric!r}")
        scaler = centroid.scaler or ckpt.scaler
        x = apply_scaler(scaler, ds.features)
        result = score(ckpt.params, centroid, x)
        cols = (result.distance, result.prob_benign, result.predicted_label)
    else:
        if not args.train_data:
            raise UsageError("score --method knn needs --train-data")
        base = _scaled(ckpt, benign_only(_load(args, args.train_data)))
        latents = encode(ckpt.params, base.features)
        x = apply_scaler(ckpt.scaler, ds.features)
        d = knn_baseline_score(ckpt.params, latents, x, args.metric or "cosine")
        cols = (d, [""] * len(d), [""] * len(d))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_COLUMNS)
        for i, (lab, d, p, y) in enumerate(zip(names, *cols)):
            writer.writerow([i, lab, repr(float(d)), "" if p == "" else repr(float(p)), y])
    print(f"scored {len(ds)} rows ({args.method}); wrote {args.out}")


def read_scores(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or "label" not in rows[0] or "distance" not in rows[0]:
        raise DataError(f"{path}: expected columns {', '.join(SCORE_COLUMNS)}")
    return rows


def cmd_eval_binary(args):
    rows = read_scores(args.scores)
    labels_raw = [r["label"] for r in rows]
    if args.benign_label not in labels_raw:
        raise DataError(f"{args.scores}: no rows labelled {args.benign_label!r}")
    names = [args.benign_label] + list(dict.fromkeys(l for l in labels_raw if l != args.benign_label))
    index = {n: i for i, n in enumerate(names)}
    labels = np.array([index[l] for l in labels_raw])
    scores = np.array([float(r["distance"]) for r in rows])
    report = per_class_auroc(labels, scores, names, {"scores": args.scores})
    if all(r.get("predicted", "") != "" for r in rows):
        preds = np.array([int(r["predicted"]) for r in rows])
        report.macro_f1 = macro_f1(preds, (labels != 0).astype(int), 2)
    print(report.format_table())
    print(f"mean AUROC: {report.mean_auroc:.6f}")
    if args.out:
        report.write_csv(args.out)


def cmd_finetune(args):
    ckpt = read_checkpoint(args.checkpoint)
    train, test = align_classes(_load(args), _load(args, args.test))
    train, test = _scaled(ckpt, train), _scaled(ckpt, test)
    config = FinetuneConfig(args.epochs, args.lr, args.batch_size, args.samples_per_class,
                            args.weight_decay, tuple(args.seeds))
    results = finetune_runs(ckpt.params, train, test, config, keep_models=bool(args.out))
    for r in results:
        print(f"seed {r.seed}: macro-F1 {r.macro_f1:.6f} ({r.n_train} training rows)")
    mean = float(np.mean([r.macro_f1 for r in results]))
    print(f"mean macro-F1 over {len(results)} seeds: {mean:.6f}")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "samples_per_class", "macro_f1"])
            for r in results:
                writer.writerow([r.seed, args.samples_per_class, f"{r.macro_f1:.6f}"])
    if args.out:
        first = results[0]
        save_checkpoint(first.params, ckpt.config, args.out, scaler=ckpt.scaler, head=first.head)


def cmd_bench_inference(args):
    print(f"kernel backend: {numerics.BACKEND}")
    rows = benchmark_inference(args.sizes, args.queries, args.features, metric=args.metric,
                               repeats=args.repeats, seed=args.seed)
    print(format_bench(rows))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "n_train", "seconds_per_sample", "ratio"])
            for r in rows:
                writer.writerow([r.method, r.n_train, repr(r.seconds_per_sample), f"{r.ratio:.4f}"])


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "centroid": cmd_centroid,
    "score": cmd_score,
    "eval-binary": cmd_eval_binary,
    "finetune": cmd_finetune,
    "bench-inference": cmd_bench_inference,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except ClanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

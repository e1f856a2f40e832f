"""Command-line entry point.

Subcommands: gen-data, estimate-margins, train, sweep-margin, sweep-scale,
diagnose, loss-probe, report. Exit codes: 0 success, 1 runtime error,
2 usage error; failures print one machine-parsable line to stderr. The
MODBIAS_DATA environment variable supplies the default --data root.
"""

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import diagnostics, idx, losses, margins, models, trainer
from .errors import ModbiasError, NoRunsFound


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"usage error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _int_list(text):
    return tuple(int(x) for x in text.split(",") if x.strip() != "")


def _load_csv_matrix(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                continue  # header
    return np.asarray(rows)


def build_parser():
    parser = _Parser(prog="modbias",
                     description="Colored-digit modality bias toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    data_root = os.environ.get("MODBIAS_DATA", "")

    p = sub.add_parser("gen-data", help="generate a colored dataset",
                       parents=[], description="Build train/ and test/ "
                       "splits for one regime under --out.")
    p.add_argument("--regime", choices=["iid", "ood"], default="iid",
                   help="test-split color regime (default: iid)")
    p.add_argument("--rho", type=float, default=0.9,
                   help="train-split bias strength (default: 0.9)")
    p.add_argument("--seed", type=int, default=0, help="dataset seed (default: 0)")
    p.add_argument("--derangement", choices=["random", "cyclic"],
                   default="random",
                   help="ood test color map construction (default: random)")
    p.add_argument("--n-train", type=int, default=ds.DEFAULT_N_TRAIN,
                   help=f"train samples (default: {ds.DEFAULT_N_TRAIN})")
    p.add_argument("--n-test", type=int, default=ds.DEFAULT_N_TEST,
                   help=f"test samples (default: {ds.DEFAULT_N_TEST})")
    p.add_argument("--raw", default="",
                   help="directory of IDX files to colorize instead of the "
                        "synthesizer (default: none)")
    p.add_argument("--out", required=True, help="output dataset root")

    p = sub.add_parser("estimate-margins",
                       help="estimate the adaptive margin table")
    p.add_argument("--data", default=data_root,
                   help="dataset root; uses its train split (default: "
                        "$MODBIAS_DATA)")
    p.add_argument("--counts", default="",
                   help="bias_factor,label,count CSV instead of --data "
                        "(default: none)")
    p.add_argument("--epsilon", type=float, default=margins.DEFAULT_EPSILON,
                   help="smoothing constant (default: 1e-06)")
    p.add_argument("--save-counts", default="",
                   help="also write the count matrix CSV here (default: none)")
    p.add_argument("--out", required=True, help="margin table CSV path")

    p = sub.add_parser("train", help="train one configuration")
    _add_train_flags(p, data_root)
    p.add_argument("--name", default="", help="run name (default: model-loss)")
    p.add_argument("--runs", default="runs", help="runs root (default: runs)")

    p = sub.add_parser("sweep-margin", help="margin-family sweep")
    _add_train_flags(p, data_root, loss=False)
    p.add_argument("--runs", default="runs", help="runs root (default: runs)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel sweep cells (default: 1)")

    p = sub.add_parser("sweep-scale", help="scale sweep for the adaptive loss")
    _add_train_flags(p, data_root, loss=False)
    p.add_argument("--runs", default="runs", help="runs root (default: runs)")

    p = sub.add_parser("diagnose", help="divergence/sharpness/embedding reports")
    p.add_argument("--run", required=True, help="run directory with checkpoint.bin")
    p.add_argument("--data", default=data_root,
                   help="dataset root to diagnose on (default: $MODBIAS_DATA)")
    p.add_argument("--mode", choices=["mean-softmax", "argmax-hist"],
                   default="mean-softmax",
                   help="wrong-prediction distribution (default: mean-softmax)")
    p.add_argument("--projection", choices=["linear-2d", "cosine-angle"],
                   default="linear-2d",
                   help="embedding projection (default: linear-2d)")
    p.add_argument("--classes", type=_int_list, default=(0, 1),
                   help="classes for cosine-angle projection (default: 0,1)")
    p.add_argument("--max-samples", type=int, default=0,
                   help="cap samples for the embedding, 0 = all (default: 0)")
    p.add_argument("--svg", action="store_true",
                   help="also write an SVG scatter (default: off)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("loss-probe",
                       help="evaluate a loss kernel on CSV-supplied rows")
    p.add_argument("--kernel",
                   choices=["softmax", "nsl", "lmcl", "mmdb", "kd"],
                   required=True, help="kernel to evaluate")
    p.add_argument("--logits", required=True,
                   help="CSV of logit/cosine rows (no header)")
    p.add_argument("--targets", default="",
                   help="CSV of integer targets, one per row (default: none)")
    p.add_argument("--margins", default="",
                   help="CSV of margin rows for mmdb (default: none)")
    p.add_argument("--margin", type=float, default=0.0,
                   help="fixed margin for lmcl (default: 0.0)")
    p.add_argument("--scale", type=float, default=losses.DEFAULT_SCALE,
                   help="scale factor (default: 16.0)")
    p.add_argument("--temperature", type=float, default=1.0,
                   help="temperature for kd (default: 1.0)")
    p.add_argument("--out", default="", help="write probabilities CSV here "
                                             "(default: print loss only)")

    p = sub.add_parser("report", help="assemble markdown tables from runs")
    p.add_argument("--runs", default="runs", help="runs root (default: runs)")
    p.add_argument("--out", default="", help="markdown output path "
                                             "(default: print to stdout)")
    return parser


def _add_train_flags(p, data_root, loss=True):
    p.add_argument("--model", choices=["mlp", "lenet"], default="mlp",
                   help="feature extractor (default: mlp)")
    if loss:
        p.add_argument("--loss", choices=list(trainer.LOSS_KINDS),
                       default="softmax", help="loss kind (default: softmax)")
        p.add_argument("--margin", type=float, default=0.0,
                       help="fixed margin for lmcl (default: 0.0)")
    p.add_argument("--data", default=data_root,
                   help="dataset root (default: $MODBIAS_DATA)")
    p.add_argument("--eval", action="append", default=[],
                   metavar="NAME=DIR",
                   help="extra dataset roots to evaluate (default: none)")
    p.add_argument("--margins", default="",
                   help="margin table CSV for mmdb (default: none)")
    p.add_argument("--epochs", type=int, default=0,
                   help="epochs, 0 = per-model default "
                        f"(mlp {trainer.DEFAULT_EPOCHS['mlp']}, "
                        f"lenet {trainer.DEFAULT_EPOCHS['lenet']})")
    p.add_argument("--batch-size", type=int, default=128,
                   help="mini-batch size (default: 128)")
    p.add_argument("--lr", type=float, default=1e-3,
                   help="learning rate (default: 0.001)")
    p.add_argument("--optimizer", choices=["adam", "sgd-momentum"],
                   default="adam", help="optimizer (default: adam)")
    p.add_argument("--scale", type=float, default=losses.DEFAULT_SCALE,
                   help="cosine scale factor (default: 16.0)")
    p.add_argument("--seeds", type=_int_list, default=(0, 1, 2, 3, 4),
                   help="comma-separated seeds (default: 0,1,2,3,4)")


def _config_from_args(args, loss=None, fixed_margin=None):
    extra = {}
    for item in args.eval:
        if "=" not in item:
            raise SystemExit(_usage(f"--eval expects NAME=DIR, got {item!r}"))
        name, root = item.split("=", 1)
        extra[name] = root
    return trainer.TrainConfig(
        model=args.model,
        loss=loss if loss is not None else args.loss,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        scale=args.scale,
        fixed_margin=fixed_margin if fixed_margin is not None
        else getattr(args, "margin", 0.0),
        seeds=tuple(args.seeds),
        data=args.data,
        eval_extra=extra,
        margins_path=args.margins,
    )


def _usage(message):
    print(f"usage error: {message}", file=sys.stderr)
    return 2


def cmd_gen_data(args):
    gray_source = None
    if args.raw:
        tr = idx.load_pair(os.path.join(args.raw, "train-images-idx3-ubyte"),
                           os.path.join(args.raw, "train-labels-idx1-ubyte"))
        te = idx.load_pair(os.path.join(args.raw, "t10k-images-idx3-ubyte"),
                           os.path.join(args.raw, "t10k-labels-idx1-ubyte"))
        gray_source = (tr[0], tr[1], te[0], te[1])
    train_split, test_split = ds.build_dataset(
        regime=args.regime, seed=args.seed, rho=args.rho,
        n_train=args.n_train, n_test=args.n_test,
        derangement_kind=args.derangement, gray_source=gray_source)
    ds.write_dataset(args.out, train_split, test_split)
    print(f"wrote {args.out}/train ({len(train_split)} samples) and "
          f"{args.out}/test ({len(test_split)} samples), regime={args.regime}")
    return 0


def cmd_estimate_margins(args):
    if args.counts:
        counts = margins.load_counts_csv(args.counts)
    else:
        if not args.data:
            return _usage("estimate-margins needs --data or --counts")
        split = ds.load_split(os.path.join(args.data, "train"))
        counts = margins.count_bias(split.labels, split.bias)
    table = margins.margins_from_counts(counts, args.epsilon)
    if args.save_counts:
        margins.save_counts_csv(counts, args.save_counts)
    margins.save_margin_table(table, args.out)
    print(f"wrote {args.out} ({table.shape[0]}x{table.shape[1]} margins)")
    return 0


def cmd_train(args):
    if args.loss == "mmdb" and not args.margins:
        return _usage("--margins is required when --loss mmdb")
    if not args.data:
        return _usage("train needs --data (or set MODBIAS_DATA)")
    config = _config_from_args(args)
    name = args.name or f"{config.model}-{config.loss}"
    out_dir = os.path.join(args.runs, name)
    report, _ = trainer.train(config, out_dir=out_dir)
    acc = report["aggregate"]["test_acc"]
    print(f"run {name}: test acc {acc['mean']:.4f} +/- {acc['std']:.4f} "
          f"({len(config.seeds)} seeds) -> {out_dir}")
    return 0


def cmd_sweep_margin(args):
    if not args.margins:
        return _usage("--margins is required for sweep-margin (adaptive cell)")
    if not args.data:
        return _usage("sweep-margin needs --data (or set MODBIAS_DATA)")
    config = _config_from_args(args, loss="softmax", fixed_margin=0.0)
    out_dir = os.path.join(args.runs, f"sweep-margin-{config.model}")
    rows = trainer.sweep_margin(config, out_dir=out_dir, jobs=args.jobs)
    for r in rows:
        print(f"{r['cell']:>10}: {r['mean_acc']:.4f} +/- {r['std_acc']:.4f}")
    print(f"wrote {out_dir}/table6.csv")
    return 0


def cmd_sweep_scale(args):
    if not args.margins:
        return _usage("--margins is required for sweep-scale")
    if not args.data:
        return _usage("sweep-scale needs --data (or set MODBIAS_DATA)")
    config = _config_from_args(args, loss="mmdb", fixed_margin=0.0)
    out_dir = os.path.join(args.runs, f"sweep-scale-{config.model}")
    rows = trainer.sweep_scale(config, out_dir=out_dir)
    for r in rows:
        print(f"s={r['scale']:>3}: {r['mean_acc']:.4f} "
              f"finite={r['finite_loss']}")
    print(f"wrote {out_dir}/fig6.csv")
    return 0


def cmd_diagnose(args):
    if not args.data:
        return _usage("diagnose needs --data (or set MODBIAS_DATA)")
    params, kind, _ = models.load_checkpoint(
        os.path.join(args.run, "checkpoint.bin"))
    loss_kind = "softmax"
    scale = losses.DEFAULT_SCALE
    cfg_path = os.path.join(args.run, "config.json")
    if os.path.exists(cfg_path):
        with open(cfg_path, encoding="utf-8") as fh:
            cfg = json.load(fh)
        loss_kind = cfg.get("loss", "softmax")
        scale = cfg.get("scale", scale)
    train_split, test_split = ds.load_dataset(args.data)
    counts = margins.count_bias(train_split.labels, train_split.bias)
    table = margins.margins_from_counts(counts)
    os.makedirs(args.out, exist_ok=True)

    probs, preds = diagnostics.model_probs(
        params, test_split, loss_kind=loss_kind, scale=scale,
        margin_table=table if loss_kind == "mmdb" else None)
    rows = diagnostics.bias_jsd_report(
        probs, preds, test_split.labels.astype(np.int64), test_split.bias,
        counts, mode=args.mode)
    diagnostics.write_jsd_csv(rows, os.path.join(args.out, "jsd.csv"))

    sample = test_split.float_pixels(slice(0, 512))
    _, scores = models.features_and_scores(params, sample, cosine=True)
    margin_rows = table[test_split.bias[:512]]
    sharp = diagnostics.sharpness_compare(scale * scores, margin_rows, scale)
    diagnostics.write_sharpness_csv(sharp,
                                    os.path.join(args.out, "sharpness.csv"))

    cap = args.max_samples if args.max_samples > 0 else None
    pts, labels, bias = diagnostics.export_embeddings(
        params, test_split, projection=args.projection,
        classes=tuple(args.classes), max_samples=cap)
    diagnostics.write_embedding_csv(pts, labels, bias,
                                    os.path.join(args.out, "embedding.csv"))
    if args.svg:
        diagnostics.svg_scatter(pts, labels,
                                os.path.join(args.out, "embedding.svg"))
    mean_jsd = float(np.mean([r["jsd_bits"] for r in rows]))
    print(f"wrote {args.out}: jsd.csv ({len(rows)} factors, mean "
          f"{mean_jsd:.4f} bits), sharpness.csv, embedding.csv")
    return 0


def cmd_loss_probe(args):
    rows = _load_csv_matrix(args.logits)
    if rows.size == 0:
        return _usage(f"no numeric rows in {args.logits}")
    if args.kernel == "kd":
        probs = losses.kd_softened_probs(rows, args.temperature)
        loss = float(np.mean(losses.entropy(probs)))
        print(f"kd T={args.temperature:g}: mean entropy {loss:.6f} bits")
    else:
        if not args.targets:
            return _usage(f"--targets is required for kernel {args.kernel}")
        y = _load_csv_matrix(args.targets).astype(np.int64).ravel()
        if len(y) != len(rows):
            return _usage(f"{len(rows)} rows vs {len(y)} targets")
        k = rows.shape[1]
        if args.kernel == "softmax":
            u = rows
        elif args.kernel == "nsl":
            u = args.scale * rows
        elif args.kernel == "lmcl":
            m = np.zeros_like(rows)
            m[np.arange(len(y)), y] = args.margin
            u = args.scale * (rows - m)
        else:
            if not args.margins:
                return _usage("--margins is required when --kernel mmdb")
            m = _load_csv_matrix(args.margins)
            if m.shape != rows.shape:
                return _usage(f"margin rows {m.shape} vs logits {rows.shape}")
            u = args.scale * (rows - m)
        loss, _ = losses.softmax_loss(u, y)
        probs = losses.stable_softmax(u)
        print(f"{args.kernel}: loss {float(loss):.9f} over {len(rows)} rows")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for row in np.atleast_2d(probs):
                w.writerow([f"{v:.9f}" for v in row])
        print(f"wrote {args.out}")
    return 0


def _fmt_cell(mean, std):
    if mean is None:
        return "—"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def cmd_report(args):
    lines = ["# Results", ""]
    report_paths = sorted(glob.glob(os.path.join(args.runs, "**", "report.json"),
                                    recursive=True))
    sweep_paths = sorted(glob.glob(os.path.join(args.runs, "**", "table6.csv"),
                                   recursive=True))
    scale_paths = sorted(glob.glob(os.path.join(args.runs, "**", "fig6.csv"),
                                   recursive=True))
    if not report_paths and not sweep_paths and not scale_paths:
        raise NoRunsFound(f"no runs under {args.runs}")

    if report_paths:
        lines += ["## Runs", "",
                  "| run | model | loss | test acc (%) | extra |",
                  "|---|---|---|---|---|"]
        for path in report_paths:
            with open(path, encoding="utf-8") as fh:
                rep = json.load(fh)
            cfg = rep.get("config", {})
            agg = rep.get("aggregate", {})
            acc = agg.get("test_acc", {})
            extras = [f"{k.removesuffix('_acc')} "
                      f"{_fmt_cell(v.get('mean'), v.get('std'))}"
                      for k, v in sorted(agg.items())
                      if k.endswith("_acc") and k not in ("test_acc", "train_acc")]
            name = os.path.relpath(os.path.dirname(path), args.runs)
            lines.append(
                f"| {name} | {cfg.get('model', '—')} | {cfg.get('loss', '—')} "
                f"| {_fmt_cell(acc.get('mean'), acc.get('std'))} "
                f"| {', '.join(extras) if extras else '—'} |")
        lines.append("")

    for path in sweep_paths:
        name = os.path.relpath(path, args.runs)
        lines += [f"## Margin sweep ({name})", ""]
        cells = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                cells[row["cell"]] = row
        header = ["baseline", "nsl", "lmcl-0.1", "lmcl-0.3", "lmcl-0.5",
                  "lmcl-0.7", "lmcl-0.9", "adaptive"]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        vals = []
        for cell in header:
            row = cells.get(cell)
            if row is None:
                vals.append("—")
            else:
                vals.append(_fmt_cell(float(row["mean_acc"]),
                                      float(row["std_acc"])))
        lines.append("| " + " | ".join(vals) + " |")
        lines.append("")

    for path in scale_paths:
        name = os.path.relpath(path, args.runs)
        lines += [f"## Scale sweep ({name})", "",
                  "| s | accuracy (%) | finite loss |", "|---|---|---|"]
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                lines.append(
                    f"| {row['scale']} "
                    f"| {_fmt_cell(float(row['mean_acc']), float(row['std_acc']))} "
                    f"| {'yes' if row['finite_loss'] == '1' else 'NO'} |")
        lines.append("")

    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "estimate-margins": cmd_estimate_margins,
    "train": cmd_train,
    "sweep-margin": cmd_sweep_margin,
    "sweep-scale": cmd_sweep_scale,
    "diagnose": cmd_diagnose,
    "loss-probe": cmd_loss_probe,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ModbiasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IO: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Mini-batch training, evaluation, multi-seed aggregation, and sweeps.

A run trains one (model, loss) configuration for each seed on a dataset
directory, evaluates train/test accuracy and mean loss, and persists
`config.json`, `report.json`, `curves.csv`, and `checkpoint.bin` (the last
seed's parameters) under `runs/<name>/`. Identical configs produce
identical report numerics; wall-clock fields are informational.

The adaptive loss always uses the margin table estimated on the training
split, including when evaluating other splits.
"""

import csv
import dataclasses
import json
import os
import time

import numpy as np

from . import dataset as ds
from . import losses, margins, models
from .errors import ConfigInvalid, MissingMarginTable, ShapeMismatch

DEFAULT_EPOCHS = {"mlp": 24, "lenet": 8}
EVAL_BATCH = 512
LOSS_KINDS = ("softmax", "nsl", "lmcl", "mmdb")
SWEEP_MARGINS = (0.1, 0.3, 0.5, 0.7, 0.9)
SWEEP_SCALES = (1, 2, 4, 8, 16, 32, 64, 128)


@dataclasses.dataclass
class TrainConfig:
    model: str = "mlp"
    loss: str = "softmax"
    epochs: int = 0                  # 0 = per-model default
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    scale: float = losses.DEFAULT_SCALE
    fixed_margin: float = 0.0        # lmcl only
    seeds: tuple = (0, 1, 2, 3, 4)
    data: str = ""                   # dataset root with train/ and test/
    eval_extra: dict = dataclasses.field(default_factory=dict)  # name -> root
    margins_path: str = ""           # margin table CSV (mmdb only)
    d_feat: int = models.DEFAULT_FEATURES
    hidden: int = models.DEFAULT_HIDDEN

    def resolved_epochs(self):
        return self.epochs if self.epochs > 0 else DEFAULT_EPOCHS[self.model]


def validate_config(config):
    if config.model not in DEFAULT_EPOCHS:
        raise ConfigInvalid(f"unknown model {config.model!r}")
    if config.loss not in LOSS_KINDS:
        raise ConfigInvalid(f"unknown loss {config.loss!r}")
    if config.epochs < 0:
        raise ConfigInvalid("epochs must be >= 1 (0 selects the default)")
    if config.epochs == 0 and DEFAULT_EPOCHS[config.model] < 1:
        raise ConfigInvalid("default epochs misconfigured")
    if config.batch_size < 1:
        raise ConfigInvalid("batch_size must be >= 1")
    if not config.learning_rate > 0:
        raise ConfigInvalid("learning_rate must be positive")
    if not config.scale > 0:
        raise ConfigInvalid("scale must be positive")
    if not config.seeds:
        raise ConfigInvalid("seeds must be non-empty")
    if config.optimizer not in ("adam", "sgd-momentum"):
        raise ConfigInvalid(f"unknown optimizer {config.optimizer!r}")
    if config.loss == "mmdb" and not config.margins_path:
        raise MissingMarginTable("--margins is required for the mmdb loss")


def _adam_update(params, grads, state, lr, t):
    b1, b2, eps = 0.9, 0.999, 1e-8
    for k, g in grads.items():
        m, v = state[k]
        m[:] = b1 * m + (1 - b1) * g
        v[:] = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        params[k] -= lr * mh / (np.sqrt(vh) + eps)


def _sgd_momentum_update(params, grads, state, lr, mu=0.9):
    for k, g in grads.items():
        v, _ = state[k]
        v[:] = mu * v + g
        params[k] -= lr * v


def _batch_loss(params, pixels, labels, bias, config, margin_table):
    """One forward/backward step; returns (loss, grads)."""
    feats, cache = models.forward(params, pixels)
    if config.loss == "softmax":
        logits = feats @ params["W"].T
        loss, dlogits = losses.softmax_loss(logits, labels)
        dfeat = dlogits @ params["W"]
        d_head = dlogits.T @ feats
    elif config.loss == "nsl":
        loss, dfeat, d_head, _ = losses.nsl_loss(
            params["W"], feats, labels, config.scale)
    elif config.loss == "lmcl":
        loss, dfeat, d_head, _ = losses.lmcl_loss(
            params["W"], feats, labels, config.scale, config.fixed_margin)
    else:
        rows = margin_table[bias]
        loss, dfeat, d_head, _ = losses.mmdb_loss(
            params["W"], feats, labels, rows, config.scale)
    grads = models.backward(params, cache, dfeat)
    grads["W"] = d_head
    return loss, grads


def evaluate(params, split, loss_kind="softmax", scale=losses.DEFAULT_SCALE,
             fixed_margin=0.0, margin_table=None, batch=EVAL_BATCH):
    """(accuracy, mean loss, predicted classes) on a ColoredSplit.

    Cosine losses score by cosine similarity, softmax by raw logits;
    argmax ties resolve to the lowest class index.
    """
    n = len(split)
    preds = np.empty(n, dtype=np.int64)
    total_loss = 0.0
    cosine = loss_kind != "softmax"
    for i in range(0, n, batch):
        px = split.float_pixels(slice(i, i + batch))
        y = split.labels[i:i + batch].astype(np.int64)
        feats, scores = models.features_and_scores(params, px, cosine=cosine)
        preds[i:i + len(y)] = scores.argmax(axis=1)
        if loss_kind == "softmax":
            loss, _ = losses.softmax_loss(feats @ params["W"].T, y)
        elif loss_kind == "nsl":
            loss = losses.nsl_loss(params["W"], feats, y, scale)[0]
        elif loss_kind == "lmcl":
            loss = losses.lmcl_loss(params["W"], feats, y, scale, fixed_margin)[0]
        else:
            if margin_table is None:
                raise MissingMarginTable("mmdb evaluation needs a margin table")
            rows = margin_table[split.bias[i:i + batch]]
            loss = losses.mmdb_loss(params["W"], feats, y, rows, scale)[0]
        total_loss += loss * len(y)
    accuracy = float((preds == split.labels.astype(np.int64)).mean())
    return accuracy, total_loss / n, preds


def _train_one_seed(config, seed, train_split, margin_table):
    params = models.init_params(config.model, seed, config.d_feat, config.hidden)
    state = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}
    rng = np.random.default_rng(seed + 1000)
    n = len(train_split)
    curve = []
    t = 0
    for _ in range(config.resolved_epochs()):
        order = rng.permutation(n)
        ep_loss = 0.0
        for i in range(0, n, config.batch_size):
            ix = order[i:i + config.batch_size]
            px = train_split.float_pixels(ix)
            y = train_split.labels[ix].astype(np.int64)
            loss, grads = _batch_loss(params, px, y, train_split.bias[ix],
                                      config, margin_table)
            t += 1
            if config.optimizer == "adam":
                _adam_update(params, grads, state, config.learning_rate, t)
            else:
                _sgd_momentum_update(params, grads, state, config.learning_rate)
            ep_loss += loss * len(ix)
        curve.append(float(ep_loss / n))
    return params, curve


def _smooth3(values):
    v = np.asarray(values)
    if len(v) < 3:
        return v
    return np.convolve(v, np.ones(3) / 3, mode="valid")


def load_run_data(config):
    """(train split, test split, extra test splits, margin table)."""
    train_split, test_split = ds.load_dataset(config.data)
    extra = {name: ds.load_dataset(root)[1]
             for name, root in sorted(config.eval_extra.items())}
    table = None
    if config.loss == "mmdb":
        if not config.margins_path:
            raise MissingMarginTable("--margins is required for the mmdb loss")
        table = margins.load_margin_table(config.margins_path)
    return train_split, test_split, extra, table


def train(config, out_dir=None, _data=None):
    """Run every seed of a config; returns (report dict, last params)."""
    validate_config(config)
    if _data is None:
        _data = load_run_data(config)
    train_split, test_split, extra, margin_table = _data
    t0 = time.time()
    per_seed = []
    curves = {}
    params = None
    for seed in config.seeds:
        params, curve = _train_one_seed(config, seed, train_split, margin_table)
        curves[seed] = curve
        kw = dict(loss_kind=config.loss, scale=config.scale,
                  fixed_margin=config.fixed_margin, margin_table=margin_table)
        train_acc, train_loss, _ = evaluate(params, train_split, **kw)
        test_acc, test_loss, _ = evaluate(params, test_split, **kw)
        entry = {
            "seed": int(seed),
            "train_acc": train_acc, "train_loss": float(train_loss),
            "test_acc": test_acc, "test_loss": float(test_loss),
        }
        for name, split in extra.items():
            acc, mloss, _ = evaluate(params, split, **kw)
            entry[f"{name}_acc"] = acc
            entry[f"{name}_loss"] = float(mloss)
        per_seed.append(entry)

    def agg(key):
        vals = np.array([e[key] for e in per_seed])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        return {"mean": float(vals.mean()), "std": std}

    smoothed_ok = all(
        bool(np.all(np.diff(_smooth3(c)) <= 1e-6)) for c in curves.values())
    report = {
        "config": dataclasses.asdict(config),
        "backend": models.backend_name(),
        "per_seed": per_seed,
        "aggregate": {k: agg(k) for k in per_seed[0] if k != "seed"},
        "curves": {str(s): c for s, c in curves.items()},
        "loss_monotone_flag": not smoothed_ok,
        "wall_clock_sec": time.time() - t0,
    }
    if out_dir:
        persist_run(out_dir, config, report, params)
    return report, params


def persist_run(out_dir, config, report, params):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=1, sort_keys=True)
        fh.write("\n")
    # wall clock varies run to run; keep the persisted report reproducible
    stable = {k: v for k, v in report.items() if k != "wall_clock_sec"}
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(stable, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "curves.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "epoch", "train_loss"])
        for seed, curve in report["curves"].items():
            for ep, val in enumerate(curve):
                w.writerow([seed, ep, f"{val:.9f}"])
    models.save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), params,
                           seed=config.seeds[-1])


def margin_cells(fixed=SWEEP_MARGINS):
    """Cell list for the margin sweep: label, loss kind, fixed margin."""
    cells = [("baseline", "softmax", 0.0), ("nsl", "nsl", 0.0)]
    cells += [(f"lmcl-{m:g}", "lmcl", m) for m in fixed]
    cells.append(("adaptive", "mmdb", 0.0))
    return cells


def _sweep_cell(args):
    label, cfg, out_dir = args
    report, params = train(cfg)
    if out_dir:
        persist_run(os.path.join(out_dir, label), cfg, report, params)
    accs = [e["test_acc"] for e in report["per_seed"]]
    return {
        "cell": label, "loss": cfg.loss, "margin": cfg.fixed_margin,
        "mean_acc": report["aggregate"]["test_acc"]["mean"],
        "std_acc": report["aggregate"]["test_acc"]["std"],
        "per_seed": accs,
    }


def sweep_margin(base_config, out_dir=None, jobs=1):
    """Train every margin-family cell; returns rows and writes table6.csv."""
    validate_config(dataclasses.replace(base_config, loss="mmdb"))
    tasks = []
    for label, loss_kind, m in margin_cells():
        cfg = dataclasses.replace(base_config, loss=loss_kind, fixed_margin=m)
        tasks.append((label, cfg, out_dir))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        _data = load_run_data(dataclasses.replace(base_config, loss="mmdb"))
        rows = []
        for label, cfg, cell_out in tasks:
            cell_data = (_data[0], _data[1], _data[2],
                         _data[3] if cfg.loss == "mmdb" else None)
            report, params = train(cfg, _data=cell_data)
            if cell_out:
                persist_run(os.path.join(cell_out, label), cfg, report, params)
            accs = [e["test_acc"] for e in report["per_seed"]]
            rows.append({
                "cell": label, "loss": cfg.loss, "margin": cfg.fixed_margin,
                "mean_acc": report["aggregate"]["test_acc"]["mean"],
                "std_acc": report["aggregate"]["test_acc"]["std"],
                "per_seed": accs,
            })
    if out_dir:
        _write_sweep_csv(os.path.join(out_dir, "table6.csv"), rows,
                         base_config.seeds)
    return rows


def _write_sweep_csv(path, rows, seeds):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "loss", "margin", "mean_acc", "std_acc"]
                   + [f"seed{s}" for s in seeds])
        for r in rows:
            w.writerow([r["cell"], r["loss"], f"{r['margin']:g}",
                        f"{r['mean_acc']:.6f}", f"{r['std_acc']:.6f}"]
                       + [f"{a:.6f}" for a in r["per_seed"]])


def sweep_scale(base_config, out_dir=None, scales=SWEEP_SCALES):
    """Accuracy-vs-scale curve for the adaptive loss; writes fig6.csv."""
    cfg0 = dataclasses.replace(base_config, loss="mmdb")
    validate_config(cfg0)
    _data = load_run_data(cfg0)
    rows = []
    for s in scales:
        cfg = dataclasses.replace(cfg0, scale=float(s))
        report, _ = train(cfg, _data=_data)
        accs = [e["test_acc"] for e in report["per_seed"]]
        all_finite = all(np.isfinite(c).all() for c in report["curves"].values())
        rows.append({
            "scale": s,
            "mean_acc": report["aggregate"]["test_acc"]["mean"],
            "std_acc": report["aggregate"]["test_acc"]["std"],
            "per_seed": accs,
            "finite_loss": bool(all_finite),
        })
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "fig6.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "mean_acc", "std_acc", "finite_loss"]
                       + [f"seed{s}" for s in base_config.seeds])
            for r in rows:
                w.writerow([r["scale"], f"{r['mean_acc']:.6f}",
                            f"{r['std_acc']:.6f}", int(r["finite_loss"])]
                           + [f"{a:.6f}" for a in r["per_seed"]])
    return rows

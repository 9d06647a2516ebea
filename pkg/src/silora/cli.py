"""``silora`` command line: train, eval, predict, ablate, synth, plot.

Configs are YAML files; nested mappings and dotted keys are equivalent, so
``augment: {mixup: true}`` and ``augment.mixup: true`` mean the same thing.
Every command accepts ``--seed`` (overrides the config seed), ``--out`` and
``--json`` (one JSON document on stdout instead of human-readable lines).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import csv
import json
import logging
import platform
import sys
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .augment import AugmentPolicy
from .backbone import load_bundle
from .data import load_dataset, load_image, save_mask, split_dataset, synth_generate, write_dataset
from .errors import ConfigError, DataError, IncompatibleCheckpointError, NumericalError, SiloraError
from .metrics import (
    METRIC_NAMES,
    aggregate_groups,
    compute_metrics,
    confusion,
    macro_average,
    micro_average,
    relative_metric,
)
from .trainer import TrainConfig, load_checkpoint, predict_mask, save_checkpoint, train

log = logging.getLogger("silora")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# key -> (type, default); REQUIRED marks keys without a default
REQUIRED = object()
CONFIG_KEYS = {
    "data.root": (str, REQUIRED),
    "data.image_size": (int, 64),
    "data.train_split": (str, "train"),
    "data.test_split": (str, "test"),
    "data.tolerate_gray": (bool, False),
    "backbone": (str, "toy"),
    "seed": (int, 0),
    "prompt": (str, "segmentation map"),
    "train.lr": (float, 1e-4),
    "train.weight_decay": (float, 1e-2),
    "train.batch_size": (int, 2),
    "train.epochs": (int, 30),
    "train.lr_schedule": (str, "constant"),
    "train.checkpoint_every": (int, 0),
    "lora.rank": (int, 8),
    "lora.alpha": (float, None),
    "augment.mixup": (bool, True),
    "augment.latent_noise": (bool, True),
    "augment.beta": (list, [0.4, 0.4]),
    "augment.sigma": (float, 1.0),
}

TABLE1_REGIMES = [(False, False), (False, True), (True, False), (True, True)]  # (mixup, latent noise)
TABLE2_COLUMNS = ["accuracy", "precision", "recall", "f1", "miou", "iou_background", "iou_blade"]


# --------------------------------------------------------------------------- config


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, typ, value, problems):
    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
        problems.append(f"{key}: expected true/false, got {value!r}")
    elif typ is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        problems.append(f"{key}: expected an integer, got {value!r}")
    elif typ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        problems.append(f"{key}: expected a number, got {value!r}")
    elif typ is list:
        if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(x, (int, float)) for x in value):
            return [float(x) for x in value]
        problems.append(f"{key}: expected a pair of numbers, got {value!r}")
    else:
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            return str(value)
        problems.append(f"{key}: expected a string, got {value!r}")
    return None


def load_config(path, require=("data.root",), seed=None):
    """Read, flatten and validate a config file.

    All problems are collected and raised together as one
    :class:`ConfigError` whose message lists every offending key.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", [str(path)])
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})", [str(path)])
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping", [str(path)])
    flat = _flatten(raw)
    problems = [f"{k}: unknown key" for k in sorted(set(flat) - set(CONFIG_KEYS))]
    cfg = {}
    for key, (typ, default) in CONFIG_KEYS.items():
        if key in flat:
            cfg[key] = _coerce(key, typ, flat[key], problems)
        elif default is REQUIRED:
            cfg[key] = None
            if key in require:
                problems.append(f"{key}: required key is missing")
        else:
            cfg[key] = default
    if seed is not None:
        cfg["seed"] = seed
    # range checks still run when some keys had the wrong type; those keys
    # fall back to their defaults so their errors are not reported twice
    typed = {k: (CONFIG_KEYS[k][1] if cfg[k] is None and k in flat and CONFIG_KEYS[k][1] is not REQUIRED else cfg[k])
             for k in cfg}
    try:
        train_config(typed)
    except ValueError as exc:
        problems.extend(str(exc).split("; "))
    if problems:
        raise ConfigError(f"{path}: invalid configuration:\n  " + "\n  ".join(problems), problems)
    if cfg["data.root"] is not None and not Path(cfg["data.root"]).is_absolute():
        cfg["data.root"] = str((path.parent / cfg["data.root"]).resolve())
    if cfg["backbone"] != "toy" and not Path(cfg["backbone"]).is_absolute():
        cfg["backbone"] = str((path.parent / cfg["backbone"]).resolve())
    return cfg


def train_config(cfg, **augment):
    policy = AugmentPolicy(
        mixup=augment.get("mixup", cfg["augment.mixup"]),
        latent_noise=augment.get("latent_noise", cfg["augment.latent_noise"]),
        beta=tuple(cfg["augment.beta"]),
        sigma=cfg["augment.sigma"],
    )
    return TrainConfig(
        lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        rank=cfg["lora.rank"],
        alpha=cfg["lora.alpha"],
        prompt=cfg["prompt"],
        image_size=cfg["data.image_size"],
        seed=cfg["seed"],
        augment=policy,
        lr_schedule=cfg["train.lr_schedule"],
        checkpoint_every=cfg["train.checkpoint_every"],
    )


# --------------------------------------------------------------------------- helpers


def _bundle(spec):
    try:
        return load_bundle(spec)
    except FileNotFoundError:
        raise DataError(f"backbone file not found: {spec}")


def _dataset(cfg, split):
    samples = load_dataset(cfg["data.root"], split, cfg["data.image_size"], cfg["data.tolerate_gray"])
    if not samples:
        raise DataError(f"{cfg['data.root']}: no records in split {split!r}")
    return samples


def _write_loss_csv(path, ckpt, steps_per_epoch):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss"])
        for i, loss in enumerate(ckpt.loss_history):
            w.writerow([i // steps_per_epoch + 1, i + 1, repr(float(loss))])


def _run_training(cfg, tcfg, out, bundle=None, train_set=None):
    out.mkdir(parents=True, exist_ok=True)
    bundle = bundle or _bundle(cfg["backbone"])
    train_set = train_set or _dataset(cfg, cfg["data.train_split"])
    t0 = time.perf_counter()
    ckpt = train(train_set, bundle, tcfg, checkpoint_dir=str(out))
    t_train = time.perf_counter() - t0
    ckpt_path = out / "checkpoint.silora-ad"
    save_checkpoint(ckpt, ckpt_path)
    steps_per_epoch = -(-len(train_set) // tcfg.batch_size)
    _write_loss_csv(out / "loss.csv", ckpt, steps_per_epoch)
    epoch_losses = ckpt.epoch_losses(steps_per_epoch)
    record = {
        "run_id": uuid.uuid4().hex[:12],
        "silora_version": __version__,
        "platform": platform.platform(),
        "seed": tcfg.seed,
        "config": {**cfg, "resolved": tcfg.to_dict()},
        "checkpoint": str(ckpt_path),
        "loss_csv": str(out / "loss.csv"),
        "metrics_report": None,
        "bundle_hash": ckpt.bundle_hash,
        "data_order_hash": ckpt.data_order_hash,
        "n_train": len(train_set),
        "steps": ckpt.step,
        "first_epoch_loss": epoch_losses[0],
        "final_epoch_loss": epoch_losses[-1],
        "timings": {"train_seconds": round(t_train, 3)},
    }
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return record, ckpt, bundle


def _predict_all(images, bundle, adaptors, prompt, workers):
    """Binary masks for ``images`` in input order, optionally across threads."""
    if workers <= 1 or len(images) < 2:
        return list(predict_mask(np.stack(images), bundle, adaptors, prompt))
    chunks = np.array_split(np.arange(len(images)), min(workers, len(images)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda idx: predict_mask(np.stack([images[i] for i in idx]), bundle, adaptors, prompt), chunks)
        return [m for part in parts for m in part]


def evaluate(samples, bundle, adaptors, prompt, baseline=None, workers=1, masks=None):
    """Per-image reports plus aggregates; ``masks`` skips prediction (oracle fixtures)."""
    if not samples:
        raise DataError("cannot evaluate an empty dataset")
    if masks is None:
        masks = _predict_all([s.image for s in samples], bundle, adaptors, prompt, workers)
    per_image = [compute_metrics(confusion(m, s.mask), s.group, s.id) for m, s in zip(masks, samples)]
    return build_report(per_image, baseline)


def build_report(per_image, baseline=None):
    macro = macro_average(per_image)
    micro = micro_average(per_image)
    report = {
        "per_image": [r.as_dict() for r in per_image],
        "aggregate": {"macro": macro.as_dict(), "micro": micro.as_dict()},
        "groups": {
            g: {m: vars(s) for m, s in stats.items()} for g, stats in aggregate_groups(per_image).items()
        },
        "baseline_ref": None,
    }
    if baseline is not None:
        apply_baseline(report, baseline)
    return report


def apply_baseline(report, baseline):
    """Add relative F1/mIoU against ``baseline`` (a report dict) to ``report``'s aggregates."""
    for kind in ("macro", "micro"):
        agg, ref = report["aggregate"][kind], baseline["aggregate"][kind]
        agg["relative_f1"] = relative_metric(agg["f1"], ref["f1"])
        agg["relative_miou"] = relative_metric(agg["miou"], ref["miou"])
    report["baseline_ref"] = {kind: {k: baseline["aggregate"][kind][k] for k in ("f1", "miou")} for kind in ("macro", "micro")}
    return report


def _fmt(v):
    return "" if v is None else f"{v:.2f}"


def write_report_files(report, out, stem="report"):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    with open(out / f"{stem}_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["average", *TABLE2_COLUMNS, "relative_f1", "relative_miou"])
        for kind in ("macro", "micro"):
            agg = report["aggregate"][kind]
            w.writerow([kind, *(_fmt(agg[c]) for c in TABLE2_COLUMNS), _fmt(agg.get("relative_f1")), _fmt(agg.get("relative_miou"))])
    with open(out / f"{stem}_boxplot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "metric", "min", "q1", "median", "q3", "max", "mean", "n"])
        for g, stats in report["groups"].items():
            for m in METRIC_NAMES:
                s = stats[m]
                w.writerow([g, m, *(f"{s[k]:.4f}" for k in ("min", "q1", "median", "q3", "max", "mean")), s["n"]])
    with open(out / f"{stem}_per_image.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "group", *METRIC_NAMES])
        for r in report["per_image"]:
            w.writerow([r["image_id"], r["group"], *(f"{r[m]:.4f}" for m in METRIC_NAMES)])


# --------------------------------------------------------------------------- commands


def cmd_train(args):
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out)
    record, _, _ = _run_training(cfg, train_config(cfg), out)
    return record, [
        f"trained {record['steps']} steps on {record['n_train']} images",
        f"epoch loss {record['first_epoch_loss']:.5f} -> {record['final_epoch_loss']:.5f}",
        f"wrote {out / 'checkpoint.silora-ad'}, {out / 'loss.csv'}, {out / 'run.json'}",
    ]


def _eval_inputs(args):
    cfg = load_config(args.config, require=() if args.data else ("data.root",), seed=args.seed) if args.config else None
    if cfg is None:
        cfg = {k: (None if d is REQUIRED else d) for k, (_, d) in CONFIG_KEYS.items()}
    if args.data:
        cfg["data.root"] = args.data
    if args.backbone:
        cfg["backbone"] = args.backbone
    if cfg["data.root"] is None:
        raise ConfigError("data.root: required key is missing (pass --data or a config)", ["data.root"])
    return cfg


def cmd_eval(args):
    cfg = _eval_inputs(args)
    bundle = _bundle(cfg["backbone"])
    ckpt = load_checkpoint(args.checkpoint, bundle)
    cfg["data.image_size"] = ckpt.config.image_size
    samples = _dataset(cfg, args.split or cfg["data.test_split"])
    baseline = None
    if args.baseline:
        baseline = json.loads(Path(args.baseline).read_text())
    t0 = time.perf_counter()
    report = evaluate(samples, bundle, ckpt.adaptors, ckpt.config.prompt, baseline, args.workers)
    report["checkpoint"] = str(args.checkpoint)
    report["eval_seconds"] = round(time.perf_counter() - t0, 3)
    out = Path(args.out)
    write_report_files(report, out)
    agg = report["aggregate"]["macro"]
    lines = [f"{len(samples)} images  " + "  ".join(f"{c} {agg[c]:.2f}" for c in TABLE2_COLUMNS)]
    if baseline is not None:
        lines.append(f"relative F1 {agg['relative_f1']:.2f}  relative mIoU {agg['relative_miou']:.2f}")
    lines.append(f"wrote {out / 'report.json'}")
    summary = {"n_images": len(samples), "aggregate": report["aggregate"], "report": str(out / "report.json")}
    return summary, lines


def cmd_predict(args):
    if args.config and not args.backbone:
        args.backbone = load_config(args.config, require=())["backbone"]
    bundle = _bundle(args.backbone or "toy")
    ckpt = load_checkpoint(args.checkpoint, bundle)
    size = bundle.config.image_size
    try:
        image = load_image(args.image, size)
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"{args.image}: cannot read image ({exc})")
    mask = predict_mask(image, bundle, ckpt.adaptors, ckpt.config.prompt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(mask, out)
    frac = float(mask.mean())
    return {"image": str(args.image), "mask": str(out), "foreground_fraction": frac}, [
        f"{args.image}: foreground fraction {frac:.4f} -> {out}"
    ]


def run_ablation(cfg, out, regimes=TABLE1_REGIMES):
    """Train and evaluate every (mixup, latent noise) regime with one shared seed."""
    bundle = _bundle(cfg["backbone"])
    train_set = _dataset(cfg, cfg["data.train_split"])
    test_set = _dataset(cfg, cfg["data.test_split"])
    rows = []
    for mix, noise in regimes:
        tag = f"mixup-{'yes' if mix else 'no'}_noise-{'yes' if noise else 'no'}"
        tcfg = train_config(cfg, mixup=mix, latent_noise=noise)
        record, ckpt, _ = _run_training(cfg, tcfg, out / tag, bundle, train_set)
        report = evaluate(test_set, bundle, ckpt.adaptors, tcfg.prompt)
        rows.append({"mixup": mix, "latent_noise": noise, "tag": tag, "record": record, "report": report})
    baseline = rows[0]["report"]
    for row in rows:
        apply_baseline(row["report"], baseline)
        write_report_files(row["report"], out / row["tag"])
        row["record"]["metrics_report"] = str(out / row["tag"] / "report.json")
        (out / row["tag"] / "run.json").write_text(json.dumps(row["record"], indent=2, sort_keys=True))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mixup", "latent_noise", "accuracy", "precision", "recall", "f1", "miou", "relative_f1", "relative_miou", "data_order_hash"])
        for row in rows:
            a = row["report"]["aggregate"]["macro"]
            w.writerow(["Yes" if row["mixup"] else "No", "Yes" if row["latent_noise"] else "No",
                        *(_fmt(a[c]) for c in ("accuracy", "precision", "recall", "f1", "miou", "relative_f1", "relative_miou")),
                        row["record"]["data_order_hash"]])
    return rows


def cmd_ablate(args):
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out)
    rows = run_ablation(cfg, out)
    hashes = {r["record"]["data_order_hash"] for r in rows}
    lines = ["MixUp  Noise  F1     mIoU   relF1   relmIoU"]
    table = []
    for r in rows:
        a = r["report"]["aggregate"]["macro"]
        lines.append(f"{'Yes' if r['mixup'] else 'No':<6} {'Yes' if r['latent_noise'] else 'No':<6} "
                     f"{a['f1']:.2f}  {a['miou']:.2f}  {a['relative_f1']:.2f}  {a['relative_miou']:.2f}")
        table.append({"mixup": r["mixup"], "latent_noise": r["latent_noise"],
                      **{k: a[k] for k in ("accuracy", "precision", "recall", "f1", "miou", "relative_f1", "relative_miou")}})
    lines.append(f"data order identical across regimes: {len(hashes) == 1}")
    lines.append(f"wrote {out / 'ablation.csv'}")
    return {"rows": table, "data_order_hashes_equal": len(hashes) == 1, "csv": str(out / "ablation.csv")}, lines


def cmd_synth(args):
    seed = 0 if args.seed is None else args.seed
    samples = synth_generate(args.n, args.size, seed)
    test_fraction = args.test_fraction
    if test_fraction > 0:
        tr, te = split_dataset(samples, (1 - test_fraction, test_fraction), seed)
        splits = {"train": tr, "test": te}
    else:
        splits = {"train": samples}
    root = write_dataset(args.out, splits)
    counts = {k: len(v) for k, v in splits.items()}
    return {"root": str(root), "counts": counts, "seed": seed}, [
        f"wrote {args.n} synthetic samples to {root} ({', '.join(f'{k}={v}' for k, v in counts.items())})"
    ]


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in args.reports:
        path = Path(path)
        if path.suffix == ".json":
            rows = _boxplot_rows_from_report(json.loads(path.read_text()))
        else:
            rows = _read_csv(path)
        if not rows:
            raise DataError(f"{path}: no rows to plot")
        if "group" in rows[0] and "median" in rows[0]:
            written.extend(_plot_boxplots(plt, rows, out, path.stem, args.metrics))
        elif "mixup" in rows[0] and "relative_miou" in rows[0]:
            written.append(_plot_ablation(plt, rows, out, path.stem))
        else:
            raise DataError(f"{path}: not a boxplot or ablation table (columns {list(rows[0])})")
    return {"figures": [str(p) for p in written]}, [f"wrote {p}" for p in written]


def _boxplot_rows_from_report(report):
    rows = []
    for g, stats in report["groups"].items():
        for m, s in stats.items():
            rows.append({"group": g, "metric": m, **{k: s[k] for k in ("min", "q1", "median", "q3", "max", "mean", "n")}})
    return rows


def _plot_boxplots(plt, rows, out, stem, metrics):
    paths = []
    for metric in metrics:
        sel = [r for r in rows if r["metric"] == metric]
        if not sel:
            continue
        stats = [
            {"label": r["group"], "whislo": float(r["min"]), "q1": float(r["q1"]), "med": float(r["median"]),
             "q3": float(r["q3"]), "whishi": float(r["max"]), "mean": float(r["mean"]), "fliers": []}
            for r in sel
        ]
        fig, ax = plt.subplots(figsize=(1.2 * len(stats) + 2, 4))
        ax.bxp(stats, showmeans=True)
        ax.set_ylabel(f"{metric} (%)")
        ax.set_title(f"{metric} per windfarm")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        p = out / f"{stem}_{metric}_boxplot.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def _plot_ablation(plt, rows, out, stem):
    labels = [f"MixUp {r['mixup']}\nNoise {r['latent_noise']}" for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, key in enumerate(("relative_f1", "relative_miou")):
        ax.bar(x + (i - 0.5) * 0.38, [float(r[key]) for r in rows], width=0.38, label=key.replace("_", " "))
    ax.axhline(100, color="k", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("relative to No/No (%)")
    ax.legend()
    fig.tight_layout()
    p = out / f"{stem}_ablation.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p


# --------------------------------------------------------------------------- entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    ap = argparse.ArgumentParser(prog="silora", description="Segmentation LoRA on a frozen latent backbone.")
    ap.add_argument("--version", action="version", version=f"silora {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train adaptors from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="run config (data root, backbone)")
    p.add_argument("--data", help="dataset root, overrides data.root")
    p.add_argument("--backbone", help="bundle file or 'toy', overrides the config")
    p.add_argument("--split", help="split name (default: data.test_split)")
    p.add_argument("--baseline", help="report.json to compute relative F1/mIoU against")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="predict a mask for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--backbone", help="bundle file or 'toy' (default)")
    p.add_argument("--config", help="run config; only its backbone key is read")
    p.add_argument("--out", required=True, help="output mask PNG")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", parents=[common], help="run the four augmentation regimes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic blade dataset")
    p.add_argument("--n", type=int, default=160)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--config", help="unused; accepted for symmetry")
    p.add_argument("--out", required=True, help="dataset root")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot", parents=[common], help="figures from report files")
    p.add_argument("reports", nargs="+", help="boxplot CSV, report.json or ablation.csv files")
    p.add_argument("--metrics", nargs="+", default=["miou", "f1"])
    p.add_argument("--config", help="unused; accepted for symmetry")
    p.add_argument("--out", required=True, help="figure directory")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        payload, lines = args.func(args)
    except ConfigError as exc:
        return _fail(args, EXIT_CONFIG, "config", exc)
    except IncompatibleCheckpointError as exc:
        return _fail(args, EXIT_CONFIG, "incompatible", exc)
    except (DataError, FileNotFoundError) as exc:
        return _fail(args, EXIT_DATA, "data", exc)
    except NumericalError as exc:
        return _fail(args, EXIT_NUMERIC, "numerical", exc)
    except SiloraError as exc:
        return _fail(args, EXIT_DATA, "data", exc)
    if args.json:
        print(json.dumps(payload, sort_keys=True, default=str))
    else:
        print("\n".join(lines))
    return EXIT_OK


def _fail(args, code, kind, exc):
    if getattr(args, "json", False):
        print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}))
    print(f"silora {args.command}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

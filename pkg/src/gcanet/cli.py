"""Command-line interface.

Subcommands: synth, train, infer, eval, robustness, ablate, gradcheck,
selftest. Training options can come from a JSON config file (--config)
with individual flags overriding it.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import imaging
from .gradchecks import full_network_gradcheck, run_op_suite
from .synth import DatasetSpec, dataset_build
from .train import (ABLATION_AXES, TrainConfig, ablate, default_distortion_grid,
                    evaluate, load_model, train)


def _fail(msg: str) -> "NoReturn":
    print(f"error: {msg}", file=sys.stderr)
    sys.exit(2)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        _fail(f"{what} not found: {path}")
    return p


def _load_train_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        with open(_require_file(args.config, "config file")) as f:
            cfg = TrainConfig.from_dict(json.load(f))
    elif getattr(args, "profile", "toy") == "toy":
        cfg = TrainConfig.toy()
    else:
        cfg = TrainConfig()
    for flag in ("lr", "weight_decay", "max_epochs", "batch_size", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, flag, value)
    if getattr(args, "seed", None) is not None:
        cfg.network.seed = args.seed
    return cfg


def _write_csv(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


# -- subcommand handlers ---------------------------------------------------

def cmd_synth(args):
    spec = DatasetSpec(
        train=args.train, val=args.val, test=args.test,
        height=args.size, width=args.size, seed=args.seed,
        image_dir=args.image_dir,
    )
    if args.image_dir is not None and not Path(args.image_dir).is_dir():
        _fail(f"image directory not found: {args.image_dir}")
    manifests = dataset_build(spec, args.out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args):
    cfg = _load_train_config(args)
    train_manifest = _require_file(args.train_manifest, "train manifest")
    val_manifest = _require_file(args.val_manifest, "val manifest")
    if args.resume is not None:
        _require_file(args.resume, "resume checkpoint")
    result = train(train_manifest, val_manifest, cfg, args.out,
                   resume=args.resume, quiet=args.quiet)
    print(f"best checkpoint: {result.best_path}")
    print(f"last checkpoint: {result.last_path}")
    if result.history:
        last = result.history[-1]
        print(f"final epoch {last['epoch']}: val_loss {last['val_loss']:.4f} "
              f"val_auc {last['val_auc']:.4f}")
    return 0


def cmd_infer(args):
    model, _, _ = load_model(_require_file(args.checkpoint, "checkpoint"))
    image = imaging.load_image(_require_file(args.image, "input image"))
    prob_map, class_prob = model.predict(image[None])
    out = Path(args.out) if args.out else Path(args.image).with_suffix(".heatmap.png")
    imaging.save_heatmap(out, prob_map[0])
    print(f"image forgery probability: {float(class_prob[0]):.4f}")
    print(f"heatmap written to {out}")
    return 0


def cmd_eval(args):
    model, _, _ = load_model(_require_file(args.checkpoint, "checkpoint"))
    report, _ = evaluate(
        model, _require_file(args.manifest, "manifest"),
        threshold=args.threshold, auc_mode=args.auc_mode,
    )
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json())
    return 0


def cmd_robustness(args):
    model, _, _ = load_model(_require_file(args.checkpoint, "checkpoint"))
    _, rows = evaluate(
        model, _require_file(args.manifest, "manifest"),
        distortions=default_distortion_grid(), threshold=args.threshold,
    )
    _write_csv(args.out, rows)
    print(f"{len(rows)} rows written to {args.out}")
    return 0


def cmd_ablate(args):
    base = _load_train_config(args)
    rows, summary = ablate(
        args.axis, args.seeds,
        _require_file(args.train_manifest, "train manifest"),
        _require_file(args.val_manifest, "val manifest"),
        _require_file(args.test_manifest, "test manifest"),
        base, args.out, quiet=args.quiet,
    )
    out = Path(args.out)
    _write_csv(out / "ablation_runs.csv", rows)
    _write_csv(out / "ablation_summary.csv", summary)
    for row in summary:
        auc = "n/a" if row["auc_mean"] is None else f"{row['auc_mean']:.4f}"
        print(f"{row['variant']}: auc {auc}  f1 {row['f1_mean']:.4f}")
    return 0


def cmd_gradcheck(args):
    results = run_op_suite(trials=args.trials, seed=args.seed)
    for name, err in sorted(results.items()):
        print(f"{name:20s} max relative error {err:.3e}")
    if args.full_network:
        err = full_network_gradcheck(seed=args.seed)
        print(f"{'full_network':20s} max relative error {err:.3e}")
    print("all gradient checks passed")
    return 0


def cmd_selftest(args):
    """Fast end-to-end smoke test: ops, tiny dataset, two training epochs."""
    import tempfile

    print("gradient spot check...", flush=True)
    run_op_suite(trials=3, seed=0)
    with tempfile.TemporaryDirectory() as tmp:
        print("building tiny dataset...", flush=True)
        spec = DatasetSpec(train=8, val=4, test=4, seed=0)
        manifests = dataset_build(spec, Path(tmp) / "data")
        print("training two epochs...", flush=True)
        cfg = TrainConfig.toy(max_epochs=2)
        cfg.network.stage_channels = (4, 6, 8, 10, 12)
        result = train(manifests["train"], manifests["val"], cfg,
                       Path(tmp) / "run", quiet=True)
        model, _, _ = load_model(result.best_path)
        report, _ = evaluate(model, manifests["test"])
        print(f"test pixel AUC after 2 epochs: {report.pixel_auc:.3f}")
    print("selftest passed")
    return 0


# -- parser ----------------------------------------------------------------

def _add_train_config_flags(p):
    p.add_argument("--config", help="JSON file with the full training config")
    p.add_argument("--profile", choices=("toy", "paper"), default="toy",
                   help="base hyperparameter profile when no --config is given")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcanet",
        description="Image forgery localization: synthesis, training, "
                    "inference, evaluation, robustness, and ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-dir", dest="image_dir",
                   help="source real images instead of procedural textures")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--deterministic", action="store_true",
                   help="bit-reproducible runs (always on; flag kept for "
                        "script compatibility)")
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="heatmap + image probability for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", help="heatmap path (default: <image>.heatmap.png)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metrics on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--auc-mode", choices=("per_image", "pooled"),
                   default="per_image")
    p.add_argument("--out", help="write the JSON report here too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="metric sweep under distortions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("ablate", help="train + compare variants along one axis")
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True)
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full-network", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="fast end-to-end smoke test")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

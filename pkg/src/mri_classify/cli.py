"""Command-line surface: ingest, augment, split, train, eval, predict.

Exit codes: 0 success, 1 validation failure, 2 I/O problem, 3 numeric abort.
Errors print a single machine-parseable line to stderr of the form
``error: <category>: <detail>``.

Option precedence: command-line flags override keys in a TOML ``--config``
file, which override built-in defaults. All randomness flows from ``--seed``.
``MRI_CLASSIFY_THREADS`` caps worker parallelism during evaluation.
"""

from __future__ import annotations

import argparse
import fcntl
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import data as datapipe
from .archive import load_weights, save_weights
from .errors import NonFiniteLossError
from .estimator import resolve_freeze
from .evaluate import evaluate_model, emit_report, write_curves
from .model import build_model
from .train import TrainConfig, fit

DEFAULTS = {
    "epochs": 10,
    "batch_size": 32,
    "lr": 1e-4,
    "optimizer": "adam",
    "seed": 0,
    "k": 9,
    "ratios": "0.8/0.1/0.1",
    "freeze": "auto",
    "width": 1.0,
}


def worker_count() -> int:
    env = os.environ.get("MRI_CLASSIFY_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"MRI_CLASSIFY_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise ValueError("MRI_CLASSIFY_THREADS must be >= 1")
        return n
    return min(4, os.cpu_count() or 1)


@contextmanager
def manifest_lock(manifest_path):
    """Advisory exclusive lock so commands never race on one manifest."""
    lock_path = Path(str(manifest_path) + ".lock")
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    with open(lock_path, "w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace("/", ",").split(",") if p]
    if len(parts) != 3:
        raise ValueError(f"ratios must be three numbers like 0.8/0.1/0.1, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def load_config_file(path) -> dict:
    try:
        import tomllib  # Python 3.11+
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as f:
        return tomllib.load(f)


def resolve_options(args: argparse.Namespace) -> argparse.Namespace:
    """Apply flag > config file > default precedence to every option."""
    config = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, default in DEFAULTS.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            value = config.get(key, default)
            setattr(args, key, type(default)(value))
    for key in ("data_root", "manifest", "out_dir", "weights"):
        if hasattr(args, key) and getattr(args, key) is None and key in config:
            setattr(args, key, str(config[key]))
    return args


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    manifest = datapipe.scan_data_root(args.data_root)
    with manifest_lock(args.manifest):
        datapipe.write_manifest(manifest, args.manifest)
    counts = manifest.class_counts
    tumor, healthy = counts.get("tumor", 0), counts.get("healthy", 0)
    print("Dataset    Tumor  Healthy  Total")
    print(f"Collected  {tumor:5d}  {healthy:7d}  {tumor + healthy:5d}")
    print(f"manifest written to {args.manifest}")
    return 0


def cmd_augment(args) -> int:
    with manifest_lock(args.manifest):
        manifest = datapipe.read_manifest(args.manifest)
        expanded = datapipe.augment_manifest(manifest, k=args.k, seed=args.seed)
        datapipe.write_manifest(expanded, args.manifest)
    counts = {"tumor": 0, "healthy": 0}
    for r in expanded.augmented():
        counts[r.label] += 1
    total = sum(counts.values())
    print("Dataset    Tumor  Healthy  Total")
    print(f"Augmented  {counts['tumor']:5d}  {counts['healthy']:7d}  {total:5d}")
    return 0


def cmd_split(args) -> int:
    ratios = parse_ratios(args.ratios)
    with manifest_lock(args.manifest):
        manifest = datapipe.read_manifest(args.manifest)
        assigned = datapipe.stratified_group_split(manifest, ratios=ratios, seed=args.seed)
        datapipe.write_manifest(assigned, args.manifest)
    for split in ("train", "val", "test"):
        records = assigned.by_split(split)
        print(f"{split}: {len(records)} records")
    return 0


def _split_datasets(manifest, root):
    parts = {}
    for split in ("train", "val", "test"):
        parts[split] = datapipe.ManifestDataset(manifest.by_split(split), root)
    return parts


def cmd_train(args) -> int:
    with manifest_lock(args.manifest):
        manifest = datapipe.read_manifest(args.manifest)
    manifest.validate()
    parts = _split_datasets(manifest, args.data_root)
    if len(parts["train"]) == 0 or len(parts["val"]) == 0:
        raise ValueError("manifest has no train/val assignment; run the split command first")

    model = build_model(seed=args.seed, width=args.width)
    if args.weights:
        load_weights(model, args.weights, policy="base_only")
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
        freeze_policy=tuple(resolve_freeze(args.freeze, model, bool(args.weights))),
    )
    curves = fit(model, parts["train"], parts["val"], config)

    out = Path(args.out_dir)
    save_weights(model, out / "weights")
    write_curves(curves, out)
    print(
        f"trained {config.epochs} epochs: "
        f"train_acc={curves.train_acc[-1]:.4f} val_acc={curves.val_acc[-1]:.4f}"
    )
    print(f"weights written to {out / 'weights'}")
    return 0


def cmd_eval(args) -> int:
    with manifest_lock(args.manifest):
        manifest = datapipe.read_manifest(args.manifest)
    manifest.validate()
    test = datapipe.ManifestDataset(manifest.by_split("test"), args.data_root)
    if len(test) == 0:
        raise ValueError("manifest has no test assignment; run the split command first")
    model = build_model(seed=args.seed, width=args.width)
    load_weights(model, args.weights, policy="strict")
    report = evaluate_model(model, test, workers=worker_count())
    emit_report(report, args.out_dir)
    m = report.as_dict()
    fields = " ".join(
        f"{k}={m[k]:.6g}" if m[k] is not None else f"{k}=undefined"
        for k in ("accuracy", "precision", "recall", "f1", "specificity", "auc")
    )
    print(fields)
    print(f"report written to {args.out_dir}")
    return 0


def cmd_predict(args) -> int:
    model = build_model(seed=args.seed, width=args.width)
    load_weights(model, args.weights, policy="strict")
    image = datapipe.normalize(datapipe.resize_bilinear(datapipe.decode_image(args.image)))
    p_tumor = model.predict_proba(image)
    if p_tumor >= 0.5:
        print(f"tumor {p_tumor:.4f}")
    else:
        print(f"healthy {1.0 - p_tumor:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mri-classify",
        description="Binary brain-MRI classification pipeline (VGG-19 transfer learning).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data_root=False, manifest=False, out_dir=False, weights=False):
        p.add_argument("--config", help="TOML config file; flags override its keys")
        p.add_argument("--seed", type=int, default=None,
                       help=f"root random seed (default: {DEFAULTS['seed']})")
        if data_root:
            p.add_argument("--data-root", dest="data_root",
                           help="directory with tumor/ and healthy/ image folders")
        if manifest:
            p.add_argument("--manifest", help="path to manifest.jsonl")
        if out_dir:
            p.add_argument("--out-dir", dest="out_dir", help="output directory")
        if weights:
            p.add_argument("--weights", help="weight archive directory")

    p = sub.add_parser("ingest", help="inventory a data root into a manifest")
    common(p, data_root=True, manifest=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="append shift/rotation records per original image")
    common(p, manifest=True)
    p.add_argument("--k", type=int, default=None,
                   help=f"augmented copies per original (default: {DEFAULTS['k']})")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="assign leakage-safe stratified train/val/test splits")
    common(p, manifest=True)
    p.add_argument("--ratios", default=None,
                   help=f"train/val/test fractions (default: {DEFAULTS['ratios']})")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the classifier on the train split")
    common(p, data_root=True, manifest=True, out_dir=True, weights=True)
    p.add_argument("--epochs", type=int, default=None,
                   help=f"training epochs (default: {DEFAULTS['epochs']})")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                   help=f"samples per update (default: {DEFAULTS['batch_size']})")
    p.add_argument("--lr", type=float, default=None,
                   help=f"learning rate (default: {DEFAULTS['lr']})")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=None,
                   help=f"update rule (default: {DEFAULTS['optimizer']})")
    p.add_argument("--freeze", default=None,
                   help="layers to freeze: none, conv, base, or a comma list "
                        f"(default: {DEFAULTS['freeze']}; auto freezes conv "
                        "layers when --weights is given)")
    p.add_argument("--width", type=float, default=None,
                   help=f"channel width multiplier (default: {DEFAULTS['width']})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate the test split and emit report files")
    common(p, data_root=True, manifest=True, out_dir=True, weights=True)
    p.add_argument("--width", type=float, default=None,
                   help=f"channel width multiplier (default: {DEFAULTS['width']})")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single image")
    common(p, weights=True)
    p.add_argument("--width", type=float, default=None,
                   help=f"channel width multiplier (default: {DEFAULTS['width']})")
    p.add_argument("image", help="path to a PNG or JPEG image")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = resolve_options(args)
        _require_paths(args)
        return args.func(args)
    except NonFiniteLossError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as e:
        print(f"error: validation: {e}", file=sys.stderr)
        return 1


_REQUIRED = {
    "ingest": ("data_root", "manifest"),
    "augment": ("manifest",),
    "split": ("manifest",),
    "train": ("data_root", "manifest", "out_dir"),
    "eval": ("data_root", "manifest", "out_dir", "weights"),
    "predict": ("weights",),
}


def _require_paths(args) -> None:
    for key in _REQUIRED[args.command]:
        if getattr(args, key, None) in (None, ""):
            flag = "--" + key.replace("_", "-")
            raise ValueError(f"{flag} is required for '{args.command}'")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: prepare, train, segment, evaluate, diff, report.

``chromoseg train --dataset corpus.h5`` with no overrides runs the full
configuration: Jaccard-surrogate loss with the adversarial term (λ=10),
batch 64, Adam 2e-4 with betas 0.5/0.999, seed 123, early stop after 15
stale epochs.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import data as data_mod
from . import metrics as metrics_mod
from . import render
from .config import RunConfig, dump_config, load_config
from .discriminator import receptive_field
from .estimator import AdversarialSegmenter, NonFiniteLossError
from .losses import LOSS_KINDS

CANONICAL_NAME = "canonical.h5"
SPLIT_NAME = "split.json"


def _corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="corpus container or prepared directory")
    parser.add_argument("--layout", choices=["auto", "canonical", "published"], default="auto")
    parser.add_argument("--images-key", default=None, help="explicit dataset name for images")
    parser.add_argument("--labels-key", default=None, help="explicit dataset name for labels")


def _load_corpus(args) -> tuple[data_mod.Corpus, Path | None]:
    """Load a corpus; a prepared directory implies its canonical file and split."""
    path = Path(args.dataset)
    split_path = None
    if path.is_dir():
        split_candidate = path / SPLIT_NAME
        if split_candidate.exists():
            split_path = split_candidate
        path = path / CANONICAL_NAME
    corpus = data_mod.load_dataset(
        path, layout=args.layout, images_key=args.images_key, labels_key=args.labels_key
    )
    return corpus, split_path


def _make_split(corpus: data_mod.Corpus, ratio: float, seed: int) -> data_mod.DatasetSplit:
    split = data_mod.split_dataset(len(corpus), ratio=ratio, seed=seed)
    split.overlap_test_indices = data_mod.filter_overlap(split, corpus.labels)
    return split


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    corpus, _ = _load_corpus(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.save_canonical(out / CANONICAL_NAME, corpus)
    split = _make_split(corpus, args.ratio, args.split_seed)
    data_mod.save_split_manifest(out / SPLIT_NAME, split)
    print(
        f"prepared {len(corpus)} samples -> {out / CANONICAL_NAME}\n"
        f"split seed {args.split_seed}: {len(split.train_indices)} train / "
        f"{len(split.test_indices)} test / "
        f"{len(split.overlap_test_indices)} overlap-test"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "dataset": args.dataset,
        "layout": args.layout,
        "images_key": args.images_key,
        "labels_key": args.labels_key,
        "out": args.out,
        "split_seed": args.split_seed,
        "split_ratio": args.ratio,
        "batch_size": args.batch,
        "loss": args.loss,
        "lambda_seg": args.lambda_seg,
        "gan": None if args.gan is None else args.gan == "on",
        "max_epochs": args.max_epochs,
        "early_stop_window": args.early_stop,
        "seed": args.seed,
        "dice_monitor_samples": args.dice_monitor_samples,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.filters:
        cfg.filters = tuple(int(v) for v in args.filters.split(","))
    return cfg.validate()


def _estimator_from_config(cfg: RunConfig, checkpoint_dir: Path, verbose: int) -> AdversarialSegmenter:
    return AdversarialSegmenter(
        filters=cfg.filters,
        upsample=cfg.upsample,
        d_strides=cfg.d_strides,
        d_sigmoid=cfg.d_sigmoid,
        loss=cfg.loss,
        lambda_seg=cfg.lambda_seg,
        class_weights=cfg.class_weights,
        gan=cfg.gan,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        max_epochs=cfg.max_epochs,
        early_stop_window=cfg.early_stop_window,
        dice_monitor_samples=cfg.dice_monitor_samples,
        seed=cfg.seed,
        checkpoint_dir=checkpoint_dir,
        verbose=verbose,
    )


def _environment() -> dict:
    return {
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "platform": platform.platform(),
        "chromoseg": __version__,
    }


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    corpus, found_split = _load_corpus(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.split_manifest:
        split = data_mod.load_split_manifest(args.split_manifest)
    elif found_split is not None:
        split = data_mod.load_split_manifest(found_split)
    else:
        split = _make_split(corpus, cfg.split_ratio, cfg.split_seed)
    if split.overlap_test_indices is None:
        split.overlap_test_indices = data_mod.filter_overlap(split, corpus.labels)
    data_mod.save_split_manifest(out / SPLIT_NAME, split)
    dump_config(out / "run_config.yaml", cfg)

    checkpoint_dir = out / "checkpoints"
    est = _estimator_from_config(cfg, checkpoint_dir, args.verbose)

    state_path = checkpoint_dir / "train_state.pt"
    if args.resume and state_path.exists():
        est = AdversarialSegmenter.load(checkpoint_dir / "last")
        est.set_params(
            warm_start=True,
            checkpoint_dir=checkpoint_dir,
            max_epochs=cfg.max_epochs,
            verbose=args.verbose,
        )
        est.restore_training_state(torch.load(state_path, weights_only=False))
        print(f"resuming from epoch {est.n_epochs_}")

    X = corpus.images[split.train_indices]
    y = corpus.labels[split.train_indices]
    started = time.time()
    try:
        est.fit(X, y)
    except NonFiniteLossError as err:
        dump = {
            "error": str(err),
            "losses": err.losses,
            "batch_indices": err.batch_indices,
            "epoch": getattr(est, "n_epochs_", None),
        }
        with open(out / "failure.json", "w") as fh:
            json.dump(dump, fh, indent=2)
        print(f"aborted: {err}", file=sys.stderr)
        return 3

    manifest = {
        "config": cfg.to_dict(),
        "environment": _environment(),
        "split": {
            "n": len(corpus),
            "n_train": len(split.train_indices),
            "n_test": len(split.test_indices),
            "n_overlap_test": len(split.overlap_test_indices),
            "seed": split.seed,
        },
        "class_weights_resolved": (
            None
            if est.loss_config_.class_weights is None
            else list(est.loss_config_.class_weights)
        ),
        "batch_norm": {"eps": 1e-5, "momentum": 0.1, "init": "pytorch-default"},
        "dice_monitor_samples": cfg.dice_monitor_samples,
        "discriminator_patch_size": receptive_field(est.discriminator_config()),
        "history": est.history_,
        "dice_history": est.dice_history_,
        "best_train_dice": est.best_train_dice_,
        "n_epochs": est.n_epochs_,
        "stopped_early": est.stopped_early_,
        "wall_time_s": time.time() - started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(
        f"trained {est.n_epochs_} epochs "
        f"(best train dice {est.best_train_dice_:.4f}) -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------


def cmd_segment(args) -> int:
    est = AdversarialSegmenter.load(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs: list[tuple[str, np.ndarray]] = []
    if args.images:
        for image_path in args.images:
            jobs.append((Path(image_path).stem, render.load_gray_image(image_path)))
    elif args.dataset:
        corpus, _ = _load_corpus(args)
        indices = (
            [int(v) for v in args.indices.split(",")]
            if args.indices
            else list(range(len(corpus)))
        )
        jobs = [(f"sample{i:05d}", corpus.images[i]) for i in indices]
    else:
        print("segment needs image files or --dataset", file=sys.stderr)
        return 2

    for name, image in jobs:
        label_map = est.predict(image[None])[0]
        render.save_label_png(out / f"{name}_label.png", label_map)
        render.save_rgb_png(out / f"{name}_color.png", render.colorize(label_map))
    print(f"segmented {len(jobs)} image(s) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    est = AdversarialSegmenter.load(args.checkpoint)
    corpus, found_split = _load_corpus(args)
    manifest_path = args.split_manifest or found_split
    if args.subset != "all" and manifest_path is None:
        print("evaluate needs --split-manifest (or a prepared directory)", file=sys.stderr)
        return 2

    if args.subset == "all":
        indices = np.arange(len(corpus))
    else:
        split = data_mod.load_split_manifest(manifest_path)
        if split.overlap_test_indices is None:
            split.overlap_test_indices = data_mod.filter_overlap(split, corpus.labels)
        indices = {
            "train": split.train_indices,
            "test": split.test_indices,
            "overlap_test": split.overlap_test_indices,
        }[args.subset]
    if len(indices) == 0:
        print(f"subset {args.subset} is empty", file=sys.stderr)
        return 2

    report = est.evaluate(corpus.images[indices], corpus.labels[indices])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_mod.write_report_json(out / "report.json", report)
    metrics_mod.write_report_csv(
        out / "report.csv",
        [report.csv_row(args.name, "all"), report.csv_row(args.name, "foreground")],
    )
    confusion = {
        "counts": report.confusion.tolist(),
        "row_normalized_percent": metrics_mod.normalized_confusion(report.confusion).tolist(),
    }
    with open(out / "confusion.json", "w") as fh:
        json.dump(confusion, fh, indent=2)
        fh.write("\n")

    agg = report.aggregate["all"]
    print(
        f"evaluated {report.n_samples} samples ({args.subset}): "
        f"acc {agg['acc'] * 100:.4f}  dice {agg['dice'] * 100:.4f}  "
        f"iou {agg['iou'] * 100:.4f}  hausdorff {agg['hausdorff']:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# diff / report
# ---------------------------------------------------------------------------


def cmd_diff(args) -> int:
    pred = render.load_label_map(args.pred)
    gt = render.load_label_map(args.gt)
    image = render.difference_image(pred, gt)
    render.save_rgb_png(args.out, image, metadata={"semantics": render.DIFF_SEMANTICS})
    mismatches = int((pred != gt).sum())
    print(f"{mismatches} differing pixel(s) -> {args.out}")
    return 0


def cmd_report(args) -> int:
    names = args.names.split(",") if args.names else None
    if names and len(names) != len(args.reports):
        print("--names must match the number of report files", file=sys.stderr)
        return 2
    rows = []
    for k, report_path in enumerate(args.reports):
        with open(report_path) as fh:
            payload = json.load(fh)
        name = names[k] if names else Path(report_path).parent.name
        agg = payload["aggregate"][args.classes]
        row = {"method": name, "classes": args.classes}
        for col in metrics_mod.REPORT_COLUMNS:
            value = agg[col]
            row[col] = "" if value is None else f"{value:.4f}"
        rows.append(row)
    metrics_mod.write_report_csv(args.out, rows)
    print(f"wrote {len(rows)} row(s) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chromoseg",
        description="adversarial multiscale segmentation of overlapping chromosomes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert a corpus and write the split manifest")
    _corpus_args(p)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=123)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the adversarial segmenter")
    _corpus_args(p)
    p.add_argument("--config", default=None, help="YAML run configuration")
    p.add_argument("--split-manifest", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--loss", choices=list(LOSS_KINDS), default=None)
    p.add_argument("--lambda", dest="lambda_seg", type=float, default=None)
    p.add_argument("--gan", choices=["on", "off"], default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--early-stop", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dice-monitor-samples", type=int, default=None)
    p.add_argument("--filters", default=None, help="comma-separated filter bank override")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment images with a trained checkpoint")
    p.add_argument("images", nargs="*", help="grayscale PNG images")
    p.add_argument("--checkpoint", required=True, help="checkpoint stem (no suffix)")
    p.add_argument("--dataset", default=None)
    p.add_argument("--layout", choices=["auto", "canonical", "published"], default="auto")
    p.add_argument("--images-key", default=None)
    p.add_argument("--labels-key", default=None)
    p.add_argument("--indices", default=None, help="comma-separated corpus indices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="run the eight-metric evaluation")
    _corpus_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split-manifest", default=None)
    p.add_argument(
        "--subset",
        choices=["overlap_test", "test", "train", "all"],
        default="overlap_test",
    )
    p.add_argument("--name", default="run", help="row label for the CSV output")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diff", help="pseudo-color difference image")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("report", help="collect evaluation reports into one CSV")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--names", default=None, help="comma-separated row labels")
    p.add_argument("--classes", choices=["all", "foreground"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

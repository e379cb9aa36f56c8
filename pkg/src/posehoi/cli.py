"""Command-line surface: dataset generation, training, evaluation, visualization.

Exit codes are a stable contract: 0 success, 2 bad input (missing files,
schema or config errors, checkpoint mismatches), 3 runtime failure
(training divergence). Settings resolve as command-line flag, then the
PMF_SEED environment variable (seed only), then the config file, then the
built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .checkpoint import CheckpointError
from .config import TrainConfig, load_config
from .data import GenerationError, SchemaError, SyntheticSpec, generate_synthetic, load_dataset, render_image, save_dataset
from .evaluation import (
    dataset_ground_truth,
    evaluate,
    predict_image,
    run_inference,
    save_detections_jsonl,
    split_report,
)
from .training import TrainingDiverged, model_from_checkpoint, train
from .visualize import draw_overlay, scm_channel_images

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_json(args.spec)
    env_seed = os.environ.get("PMF_SEED")
    if env_seed is not None:
        spec.seed = int(env_seed)
    if args.seed is not None:
        spec.seed = args.seed
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    pairs = sum(
        len(dataset.humans_in(im.id)) * len(dataset.objects_in(im.id)) for im in dataset.images
    )
    print(f"wrote {args.out}: {len(dataset.images)} images, {pairs} pairs, "
          f"{len(dataset.interactions)} positive pairs")
    return EXIT_OK


def _resolve_train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    env_seed = os.environ.get("PMF_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    if getattr(args, "lr", None) is not None:
        cfg.lr = args.lr
    return cfg


def _cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    dataset = load_dataset(args.data)
    metrics_path = args.metrics or (str(args.out) + ".metrics.csv")

    def progress(it, loss):
        logger.info("iteration %d loss %.5f", it, loss)

    result = train(dataset, cfg, out_path=args.out, metrics_path=metrics_path,
                   resume=args.resume, progress=progress)
    print(f"wrote {args.out} after {cfg.iterations} iterations, final loss {result.final_loss:.5f}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    detections = run_inference(model, dataset, score_threshold=args.score_threshold)
    ground_truth = dataset_ground_truth(dataset)
    report = evaluate(detections, ground_truth, iou_thr=args.thr,
                      n_actions=len(dataset.actions) or None,
                      known_images={im.id for im in dataset.images})
    if args.detections:
        save_detections_jsonl(detections, args.detections)
    report.save_json(args.report)
    if not ground_truth:
        print("no ground-truth pairs in dataset; report contains zero-GT notice")
    print(report.table(dataset.actions))
    if args.split:
        with open(args.split) as f:
            partition = {k: list(v) for k, v in json.load(f).items()}
        for name, value in split_report(report, partition).items():
            text = "undef" if value is None else f"{value:.4f}"
            print(f"split {name}: mAP {text}")
    return EXIT_OK


def _cmd_visualize(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    result = predict_image(model, dataset, args.image)
    os.makedirs(args.out, exist_ok=True)
    image = render_image(dataset, args.image)
    betas = {}
    from .geometry import union_box
    from .spatial import build_scm

    for i, prop in enumerate(result["proposals"]):
        beta = result["scores"]["beta"][i]
        overlay = draw_overlay(image, prop, beta, union_box(prop.human, prop.object))
        overlay.save(os.path.join(args.out, f"proposal_{i:03d}.png"))
        scm = build_scm(prop, model.cfg.m, width=model.cfg.pen_width)
        for c, channel_img in enumerate(scm_channel_images(scm)):
            channel_img.save(os.path.join(args.out, f"proposal_{i:03d}_scm{c}.png"))
        betas[str(i)] = beta.tolist()
    with open(os.path.join(args.out, "betas.json"), "w") as f:
        json.dump(betas, f, indent=1)
    print(f"wrote {len(result['proposals'])} overlays to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posehoi",
        description="Pose-guided relation classification for human-object interaction detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset from a spec file")
    p.add_argument("--spec", required=True, help="synthetic spec JSON")
    p.add_argument("--out", required=True, help="output dataset JSON")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", default=None, help="INI config; defaults used when omitted")
    p.add_argument("--data", required=True, help="dataset JSON")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--metrics", default=None, help="metrics CSV (default <out>.metrics.csv)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="run inference and score against ground truth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--detections", default=None, help="also write detections JSONL here")
    p.add_argument("--thr", type=float, default=0.5, help="dual-IoU matching threshold")
    p.add_argument("--score-threshold", type=float, default=0.0, help="detection emission threshold")
    p.add_argument("--split", default=None, help="JSON mapping split name -> action ids")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("visualize", help="write overlays, map channels, and attention values")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--image", type=int, required=True, help="image id")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_visualize)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("POSEHOI_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, GenerationError, CheckpointError, FileNotFoundError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

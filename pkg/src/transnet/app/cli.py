"""Command line entry point: `transnet <subcommand> [options]`."""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from transnet.experiments import EXPERIMENT_CONF
from transnet.experiments.config import ExperimentConfig
from transnet.experiments.datasets import generate_synthetic, write_cifar_binary
from transnet.experiments.ensemble import evaluate_ensemble
from transnet.experiments.runner import ExperimentRunner, load_dataset, summarize
from transnet.invariance.report import layer_report, plot_report
from transnet.models.checkpoint import load_any, save_checkpoint
from transnet.models.transnet import prune, select_head
from transnet.training.loop import evaluate
from transnet.util.exception_handler import TransNetError
from transnet.util.logger import setup_logging
from transnet.util.types import GroupName, HeadSelection, Metric, TrainingMode

logger = logging.getLogger(__name__)


def _overrides(args) -> Dict[str, Dict[str, str]]:
    out: Dict[str, Dict[str, str]] = {"data": {}, "training": {}, "experiment": {}}
    if getattr(args, "data", None):
        out["data"].update(kind="cifar", path=args.data)
    if getattr(args, "subsample", None) is not None:
        out["data"]["subsample"] = str(args.subsample)
    if getattr(args, "seed", None) is not None:
        out["experiment"]["seeds"] = str(args.seed)
    if getattr(args, "out", None):
        out["experiment"]["output_dir"] = args.out
    if getattr(args, "mode", None):
        out["training"]["mode"] = args.mode
    if getattr(args, "heads", None) is not None:
        out["training"]["heads"] = str(args.heads)
    if getattr(args, "metric", None):
        out["experiment"]["invariance_metric"] = args.metric
    if getattr(args, "group", None):
        out["experiment"]["invariance_group"] = args.group
    return {k: v for k, v in out.items() if v}


def load_config(args) -> ExperimentConfig:
    overrides = _overrides(args)
    if getattr(args, "config", None):
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_string("", overrides)


def cmd_train(args) -> int:
    config = load_config(args)
    if args.mode is not None or args.heads is not None:
        config.grid = ()
    result = ExperimentRunner(config, progress=not args.quiet).run()
    print(result.summary.to_string(index=False))
    return 0 if (result.results["status"] == "ok").any() else 1


def cmd_eval(args) -> int:
    config = load_config(args)
    dataset = load_dataset(config.data)
    model = load_any(args.checkpoint)
    result = evaluate(model, dataset.test.inputs, dataset.test.labels, flip_average=args.flip_average)
    print(f"loss {result.loss:.6f}  accuracy {result.accuracy:.4f}")
    for j, (loss, acc) in enumerate(zip(result.head_losses, result.head_accuracies)):
        print(f"  head {j} ({model.transforms[j].name}): loss {loss:.6f}  accuracy {acc:.4f}")
    return 0


def cmd_prune(args) -> int:
    model = load_any(args.checkpoint)
    if args.head in (HeadSelection.identity.value, HeadSelection.best.value):
        inputs = labels = None
        if args.head == HeadSelection.best.value:
            dataset = load_dataset(load_config(args).data)
            inputs, labels = dataset.train.inputs, dataset.train.labels
        head = select_head(model, args.head, inputs, labels)
    else:
        head = int(args.head)
    pruned = prune(model, head, compile=not args.no_compile)
    save_checkpoint(pruned, args.output)
    logger.info(f"kept head {head} ({model.transforms[head].name}) of {model.num_heads}; wrote {args.output}")
    return 0


def cmd_ensemble(args) -> int:
    dataset = load_dataset(load_config(args).data)
    curve = evaluate_ensemble(args.checkpoints, args.size, dataset.test.inputs, dataset.test.labels)
    frame = pd.DataFrame({"instances": np.arange(1, len(curve) + 1), "accuracy": curve})
    print(frame.to_string(index=False))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        frame.to_csv(os.path.join(args.out, "ensemble.csv"), index=False, encoding="utf-8")
    return 0


def cmd_invariance(args) -> int:
    report = layer_report(args.checkpoint, args.group or GroupName.c4, args.metric or Metric.norm, args.normalized)
    print(report.summary().to_string(index=False))
    if args.out:
        report.to_csv(os.path.join(args.out, "invariance.csv"))
        report.summary().to_csv(os.path.join(args.out, "invariance_summary.csv"), index=False, encoding="utf-8")
        plot_report(report, args.out)
    return 0


def cmd_report(args) -> int:
    results_path = os.path.join(args.out, "results.csv")
    if not os.path.exists(results_path):
        raise TransNetError(f"no results.csv in {args.out}")
    results = pd.read_csv(results_path)
    summary = summarize(results)
    summary.to_csv(os.path.join(args.out, "summary.csv"), index=False, encoding="utf-8")
    config_path = os.path.join(args.out, "config.ini")
    if os.path.exists(config_path):
        config = ExperimentConfig.from_file(config_path, {"experiment": {"output_dir": args.out}})
        ExperimentRunner(config, progress=False).figures(results)
    print(summary.to_string(index=False))
    return 0


def cmd_synth_data(args) -> int:
    dataset = generate_synthetic(
        n=args.samples,
        size=args.size,
        seed=args.seed or 0,
        noise=args.noise,
        n_test=args.test_samples,
        transform=args.transform,
        standardize=False,
    )
    os.makedirs(args.out, exist_ok=True)
    write_cifar_binary(os.path.join(args.out, "data_batch_1.bin"), dataset.train.inputs, dataset.train.labels)
    write_cifar_binary(os.path.join(args.out, EXPERIMENT_CONF.TEST_FILE), dataset.test.inputs, dataset.test.labels)
    meta = {k: v.tolist() if isinstance(v, np.ndarray) else v for k, v in dataset.metadata.items()}
    meta.update(num_classes=dataset.num_classes, channels=dataset.image_shape[0], image_size=dataset.image_shape[-1])
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    logger.info(f"wrote {dataset!r} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transnet", description="Multi-head transformation networks on a dihedral group.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="experiment INI file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if data:
            p.add_argument("--data", help="directory (or file) in CIFAR binary layout")
            p.add_argument("--subsample", type=int, help="stratified training subsample size")
        return p

    p = common(sub.add_parser("train", help="train and score every run and seed of a config"))
    p.add_argument("--mode", choices=[m.value.replace("_", "-") for m in TrainingMode])
    p.add_argument("--heads", type=int)
    p.add_argument("--metric", choices=[m.value for m in Metric])
    p.add_argument("--group", choices=[g.value for g in GroupName])
    p.add_argument("--quiet", action="store_true", help="no progress bars")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint on the test split"))
    p.add_argument("checkpoint")
    p.add_argument("--flip-average", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("prune", help="keep one head and compile its transform into the kernels"))
    p.add_argument("checkpoint")
    p.add_argument("output")
    p.add_argument("--head", default=HeadSelection.identity.value, help="head index, 'identity' or 'best'")
    p.add_argument("--no-compile", action="store_true")
    p.set_defaults(func=cmd_prune)

    p = common(sub.add_parser("ensemble", help="accuracy against the number of processed instances"))
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--size", type=int, default=EXPERIMENT_CONF.ENSEMBLE_SIZE)
    p.set_defaults(func=cmd_ensemble)

    p = common(sub.add_parser("invariance", help="per-layer invariance scores of a checkpoint"), data=False)
    p.add_argument("checkpoint")
    p.add_argument("--metric", choices=[m.value for m in Metric])
    p.add_argument("--group", choices=[g.value for g in GroupName])
    p.add_argument("--normalized", action="store_true", help="divide scores by the kernel norm")
    p.set_defaults(func=cmd_invariance)

    p = sub.add_parser("report", help="re-aggregate a finished experiment directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth-data", help="write the planted-transformation dataset in CIFAR binary layout")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, default=EXPERIMENT_CONF.SYNTHETIC_SAMPLES)
    p.add_argument("--test-samples", type=int, default=EXPERIMENT_CONF.SYNTHETIC_TEST_SAMPLES)
    p.add_argument("--size", type=int, default=EXPERIMENT_CONF.SYNTHETIC_SIZE)
    p.add_argument("--noise", type=float, default=EXPERIMENT_CONF.SYNTHETIC_NOISE)
    p.add_argument("--transform", default=EXPERIMENT_CONF.SYNTHETIC_TRANSFORM)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else None)
    try:
        return args.func(args)
    except (TransNetError, OSError) as e:
        logger.error(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())

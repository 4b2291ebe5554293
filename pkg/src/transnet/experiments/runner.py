"""
Experiment orchestration: every (run, seed) pair of a config is trained and
scored on its own, then aggregated into mean and standard error per run.

Output layout under `output_dir`:

    config.ini                    resolved configuration
    results.csv                   one row per (run, seed)
    summary.csv                   mean / standard error / n per run and metric
    <label>/seed<k>/model.tnet    trained checkpoint
    <label>/seed<k>/train_log.csv per-epoch log
    <label>/seed<k>/invariance.csv
    learning_curves.svg, invariance_last_layer.svg, ensemble.svg
"""

import functools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from transnet.experiments import EXPERIMENT_CONF
from transnet.experiments.config import DataConfig, ExperimentConfig, RunSpec, write_config
from transnet.experiments.datasets import Dataset, generate_synthetic, load_cifar_binary
from transnet.experiments.ensemble import evaluate_ensemble
from transnet.experiments.plotting import plot_ensemble_curves, plot_learning_curves, plot_score_distributions
from transnet.invariance.report import layer_report
from transnet.models.checkpoint import load_checkpoint, save_checkpoint
from transnet.models.params import init_params
from transnet.models.transnet import count_flops, count_parameters, prune, select_head
from transnet.training.config import TrainingConfig
from transnet.training.loop import Trainer, TrainingResult, evaluate
from transnet.training.statistics import generalization_ratio
from transnet.util.exception_handler import DivergenceError, exception_handler, timing_decorator
from transnet.util.logger import setup_logging
from transnet.util.types import HeadSelection

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=2)
def load_dataset(data: DataConfig) -> Dataset:
    if data.kind == "synthetic":
        return generate_synthetic(
            n=data.synthetic_samples,
            size=data.synthetic_size,
            seed=data.seed,
            noise=data.synthetic_noise,
            n_test=data.synthetic_test_samples,
            channels=data.channels,
            transform=data.synthetic_transform,
        )
    return load_cifar_binary(
        data.path,
        num_classes=data.num_classes,
        subsample=data.subsample,
        test_subsample=data.test_subsample,
        seed=data.seed,
        channels=data.channels,
        image_size=data.image_size,
    )


def worker_count(requested: Optional[int], jobs: int) -> int:
    """Requested workers (default: CPU count), capped by TNET_THREADS and the number of jobs."""
    workers = requested or os.cpu_count() or 1
    cap = os.environ.get(EXPERIMENT_CONF.THREADS_ENV)
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, min(workers, jobs))


def seed_dir(output_dir: str, label: str, seed: int) -> str:
    return os.path.join(output_dir, label, f"seed{seed}")


def standard_error(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(values.size))


def _split_metrics(model, dataset: Dataset, training: TrainingConfig, prefix: str) -> Dict[str, float]:
    if not len(dataset.test):
        return {f"{prefix}_test_acc": math.nan, f"{prefix}_test_loss": math.nan}
    result = evaluate(
        model,
        dataset.test.inputs,
        dataset.test.labels,
        training.flip_average_eval,
        training.head_average,
        training.eval_batch_size,
    )
    return {f"{prefix}_test_acc": result.accuracy, f"{prefix}_test_loss": result.loss}


def score_seed(
    config: ExperimentConfig, training: TrainingConfig, run: RunSpec, seed: int, dataset: Dataset, result: TrainingResult, out: str
) -> dict:
    """Evaluate one trained model as PT_m (pruned identity head) and T_m (all heads)."""
    model = result.model
    pruned = prune(model, select_head(model, HeadSelection.identity))
    row = {"label": training.label, "mode": run.mode.value, "heads": run.heads, "seed": seed, "status": "ok"}
    row.update(_split_metrics(pruned, dataset, training, "pt"))
    row.update(_split_metrics(model, dataset, training, "t"))
    if len(dataset.test):
        row["pt_ratio"] = generalization_ratio(
            model, dataset.train.inputs, dataset.train.labels, dataset.test.inputs, dataset.test.labels, "identity"
        )
        row["t_ratio"] = generalization_ratio(
            model, dataset.train.inputs, dataset.train.labels, dataset.test.inputs, dataset.test.labels, "full"
        )
    else:
        row["pt_ratio"] = row["t_ratio"] = math.nan
    last = result.history.iloc[-1] if len(result.history) else {}
    row["train_acc"] = float(last.get("train_acc", math.nan))
    row["train_loss"] = float(last.get("train_loss", math.nan))

    report = layer_report(model, config.invariance_group, config.invariance_metric)
    report.to_csv(os.path.join(out, "invariance.csv"))
    for layer in report.layers:
        row[f"is_conv{layer.layer + 1}_mean"] = layer.summary["mean"]
    row["is_last_mean"] = report.layers[-1].summary["mean"]
    row["is_last_std"] = report.layers[-1].summary["std"]

    if result.reduction is not None:
        row["transformation_loss"] = result.reduction.transformation_loss
        row["reduction_best_loss"] = result.reduction.best_loss
        row["reduction_holds"] = bool(result.reduction.holds)

    # PT_m must cost exactly what the base CNN costs
    size = dataset.image_shape[-1]
    base = init_params(model.params.architecture, model.params.num_classes, 1, rng=0)
    row["base_params"] = count_parameters(base)
    row["base_flops"] = count_flops(base, size)
    row["pt_params"] = count_parameters(pruned)
    row["pt_flops"] = count_flops(pruned, size)
    row["t_params"] = count_parameters(model)
    row["t_flops"] = count_flops(model, size)
    row["audit_ok"] = row["pt_params"] == row["base_params"] and row["pt_flops"] == row["base_flops"]
    if not row["audit_ok"]:
        logger.error(f"{training.label} seed {seed}: pruned model differs in cost from the base CNN")
    row["iterations"] = result.iterations
    row["wall_time_s"] = float(last.get("wall_time_s", math.nan))
    return row


@exception_handler(default_return_value=None, exceptions=(DivergenceError,))
def train_seed(config: ExperimentConfig, run: RunSpec, seed: int, progress: bool = True) -> dict:
    dataset = load_dataset(config.data)
    training = config.training_for(run, seed)
    out = seed_dir(config.output_dir, training.label, seed)
    os.makedirs(out, exist_ok=True)
    trainer = Trainer(training, log_path=os.path.join(out, "train_log.csv"), progress=progress)
    model = trainer.init_model(config.model.architecture(dataset.image_shape[0]), dataset.num_classes)
    result = trainer.fit(model, dataset.train, dataset.test)
    save_checkpoint(result.model, os.path.join(out, EXPERIMENT_CONF.CHECKPOINT_NAME))
    return score_seed(config, training, run, seed, dataset, result, out)


def run_job(config: ExperimentConfig, run: RunSpec, seed: int, progress: bool = True) -> dict:
    row = train_seed(config, run, seed, progress)
    if row is None:
        label = config.training_for(run, seed).label
        row = {"label": label, "mode": run.mode.value, "heads": run.heads, "seed": seed, "status": "failed"}
    return row


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Long table: label, metric, mean, stderr (sample std / sqrt(n)), n, failed."""
    rows = []
    for label, group in results.groupby("label", sort=False):
        ok = group[group["status"] == "ok"]
        failed = int((group["status"] != "ok").sum())
        numeric = ok.drop(columns=["seed", "heads"], errors="ignore").select_dtypes(include=[np.number, bool])
        for metric in numeric.columns:
            values = numeric[metric].astype(float).to_numpy()
            finite = values[np.isfinite(values)]
            rows.append(
                {
                    "label": label,
                    "metric": metric,
                    "mean": float(finite.mean()) if finite.size else math.nan,
                    "stderr": standard_error(values),
                    "n": int(finite.size),
                    "failed": failed,
                }
            )
    return pd.DataFrame(rows, columns=["label", "metric", "mean", "stderr", "n", "failed"])


@dataclass
class ExperimentResult:
    results: pd.DataFrame
    summary: pd.DataFrame
    output_dir: str
    figures: List[str] = field(default_factory=list)


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig, progress: bool = True):
        self.config = config
        self.progress = progress
        self.logger = setup_logging()

    @timing_decorator
    def run(self) -> ExperimentResult:
        config = self.config
        os.makedirs(config.output_dir, exist_ok=True)
        write_config(config, os.path.join(config.output_dir, "config.ini"))
        jobs = [(run, seed) for run in config.runs for seed in config.seeds]
        workers = worker_count(config.workers, len(jobs))
        self.logger.info(f"{len(jobs)} training runs on {workers} worker(s), output in {config.output_dir}")

        if workers == 1:
            rows = [run_job(config, run, seed, self.progress) for run, seed in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_job, config, run, seed, False) for run, seed in jobs]
                rows = [f.result() for f in futures]

        results = pd.DataFrame(rows)
        results.to_csv(os.path.join(config.output_dir, "results.csv"), index=False, encoding="utf-8")
        summary = summarize(results)
        summary.to_csv(os.path.join(config.output_dir, "summary.csv"), index=False, encoding="utf-8")
        failed = int((results["status"] != "ok").sum())
        if failed:
            self.logger.warning(f"{failed} of {len(results)} runs diverged and were recorded as failed")
        figures = self.figures(results)
        return ExperimentResult(results, summary, config.output_dir, figures)

    def _ok_dirs(self, results: pd.DataFrame) -> Dict[str, List[str]]:
        dirs: Dict[str, List[str]] = {}
        for _, row in results[results["status"] == "ok"].iterrows():
            dirs.setdefault(row["label"], []).append(seed_dir(self.config.output_dir, row["label"], int(row["seed"])))
        return dirs

    def figures(self, results: pd.DataFrame) -> List[str]:
        out = self.config.output_dir
        dirs = self._ok_dirs(results)
        if not dirs:
            return []
        paths = []
        histories = {label: [pd.read_csv(os.path.join(d, "train_log.csv")) for d in ds] for label, ds in dirs.items()}
        paths.append(plot_learning_curves(histories, os.path.join(out, "learning_curves.svg")))

        scores = {}
        for label, ds in dirs.items():
            frames = [pd.read_csv(os.path.join(d, "invariance.csv")) for d in ds]
            scores[label] = [f[f["layer"] == f["layer"].max()]["score"].to_numpy() for f in frames]
        paths.append(
            plot_score_distributions(
                scores, os.path.join(out, "invariance_last_layer.svg"), f"{self.config.invariance_metric.value} (last layer)"
            )
        )

        curves = self.ensemble_curves(dirs)
        if curves:
            paths.append(plot_ensemble_curves(curves, os.path.join(out, "ensemble.svg")))
            pd.DataFrame(
                [{"label": k, "instances": i + 1, "accuracy": a} for k, c in curves.items() for i, a in enumerate(c)]
            ).to_csv(os.path.join(out, "ensemble.csv"), index=False, encoding="utf-8")
        return paths

    def ensemble_curves(self, dirs: Dict[str, List[str]]) -> Dict[str, np.ndarray]:
        """T_m ensembles count every head as an instance; PT_m and base count one per model."""
        dataset = load_dataset(self.config.data)
        if not len(dataset.test):
            return {}
        curves = {}
        for label, ds in dirs.items():
            models = [load_checkpoint(os.path.join(d, EXPERIMENT_CONF.CHECKPOINT_NAME)) for d in ds]
            variants = {label: models}
            if models[0].num_heads > 1:
                variants = {f"P{label}": [prune(m, select_head(m)) for m in models], label: models}
            for name, members in variants.items():
                size = min(self.config.ensemble_size, sum(m.num_heads for m in members))
                curves[name] = evaluate_ensemble(members, size, dataset.test.inputs, dataset.test.labels)
        return curves


def run_experiment(config: ExperimentConfig, progress: bool = True) -> ExperimentResult:
    return ExperimentRunner(config, progress).run()

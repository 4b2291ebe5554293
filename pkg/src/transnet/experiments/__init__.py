from transnet.experiments.datasets import (
    Dataset,
    generate_synthetic,
    load_cifar_binary,
    normalize,
    read_cifar_records,
    stratified_subsample,
    write_cifar_binary,
)
from transnet.experiments.config import DataConfig, ExperimentConfig, ModelConfig, RunSpec, write_config
from transnet.experiments.ensemble import evaluate_ensemble, instance_logits
from transnet.experiments.runner import ExperimentResult, ExperimentRunner, load_dataset, run_experiment, summarize

__all__ = [
    "Dataset",
    "generate_synthetic",
    "load_cifar_binary",
    "normalize",
    "read_cifar_records",
    "stratified_subsample",
    "write_cifar_binary",
    "DataConfig",
    "ExperimentConfig",
    "ModelConfig",
    "RunSpec",
    "write_config",
    "evaluate_ensemble",
    "instance_logits",
    "ExperimentResult",
    "ExperimentRunner",
    "load_dataset",
    "run_experiment",
    "summarize",
]

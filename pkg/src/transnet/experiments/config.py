"""
Experiment configuration files.

UTF-8 `key = value` lines under [data], [model], [training] and [experiment]
headers. Every key is optional; unknown sections and keys are rejected.

    [data]
    kind = cifar
    path = data/cifar-10-batches-bin
    subsample = 5000

    [training]
    mode = transnet
    heads = 2

    [experiment]
    seeds = 0, 1, 2
    grid = base:1, transnet:2, transnet:4
"""

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from transnet.dihedral.group import TransformationSet
from transnet.experiments import EXPERIMENT_CONF
from transnet.models import MODEL_CONF
from transnet.models.params import ConvSpec
from transnet.training.config import TrainingConfig
from transnet.util.exception_handler import InputError
from transnet.util.types import GroupName, Metric, Padding, TrainingMode


@dataclass(frozen=True)
class DataConfig:
    kind: str = EXPERIMENT_CONF.DATA_KIND
    path: Optional[str] = None
    num_classes: int = EXPERIMENT_CONF.NUM_CLASSES
    image_size: int = EXPERIMENT_CONF.IMAGE_SIZE
    channels: int = EXPERIMENT_CONF.CHANNELS
    subsample: Optional[int] = EXPERIMENT_CONF.SUBSAMPLE
    test_subsample: Optional[int] = EXPERIMENT_CONF.TEST_SUBSAMPLE
    seed: int = 0
    synthetic_samples: int = EXPERIMENT_CONF.SYNTHETIC_SAMPLES
    synthetic_test_samples: int = EXPERIMENT_CONF.SYNTHETIC_TEST_SAMPLES
    synthetic_size: int = EXPERIMENT_CONF.SYNTHETIC_SIZE
    synthetic_noise: float = EXPERIMENT_CONF.SYNTHETIC_NOISE
    synthetic_transform: str = EXPERIMENT_CONF.SYNTHETIC_TRANSFORM

    def __post_init__(self):
        if self.kind not in ("cifar", "synthetic"):
            raise InputError(f"data kind must be 'cifar' or 'synthetic', got {self.kind!r}")
        if self.kind == "cifar" and not self.path:
            raise InputError("cifar data needs a path")


@dataclass(frozen=True)
class ModelConfig:
    channels: Tuple[int, ...] = MODEL_CONF.CHANNELS
    kernel_size: int = MODEL_CONF.KERNEL_SIZE
    pool_after: Tuple[bool, ...] = MODEL_CONF.POOL_AFTER
    padding: str = Padding.same.value

    def __post_init__(self):
        if len(self.channels) < 2:
            raise InputError("channels needs the input channel count and at least one layer width")
        if len(self.pool_after) != len(self.channels) - 1:
            raise InputError(f"pool_after needs {len(self.channels) - 1} entries, got {len(self.pool_after)}")

    def architecture(self, in_channels: Optional[int] = None) -> List[ConvSpec]:
        channels = (in_channels or self.channels[0],) + tuple(self.channels[1:])
        return [
            ConvSpec(channels[i], channels[i + 1], self.kernel_size, bool(self.pool_after[i]), padding=Padding(self.padding))
            for i in range(len(channels) - 1)
        ]


@dataclass(frozen=True)
class RunSpec:
    mode: TrainingMode
    heads: int

    @classmethod
    def parse(cls, text: str) -> "RunSpec":
        mode, _, heads = text.strip().partition(":")
        try:
            return cls(TrainingMode.parse(mode), int(heads) if heads else 1)
        except ValueError as e:
            raise InputError(f"bad grid entry {text!r}, expected mode:heads") from e


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=lambda: DataConfig(kind="synthetic"))
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seeds: Tuple[int, ...] = EXPERIMENT_CONF.SEEDS
    output_dir: str = EXPERIMENT_CONF.OUTPUT_DIR
    grid: Tuple[RunSpec, ...] = ()  # empty: the single run described by [training]
    invariance_group: GroupName = GroupName(EXPERIMENT_CONF.INVARIANCE_GROUP)
    invariance_metric: Metric = Metric(EXPERIMENT_CONF.INVARIANCE_METRIC)
    ensemble_size: int = EXPERIMENT_CONF.ENSEMBLE_SIZE
    workers: Optional[int] = None

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(self.seeds) < 1:
            raise InputError("an experiment needs at least one seed (repetition)")
        if len(set(self.seeds)) != len(self.seeds):
            raise InputError(f"seeds must be distinct, got {self.seeds}")
        if self.ensemble_size < 1:
            raise InputError("ensemble_size must be >= 1")

    @property
    def runs(self) -> List[RunSpec]:
        if self.grid:
            return list(self.grid)
        return [RunSpec(self.training.mode, self.training.num_heads)]

    def training_for(self, run: RunSpec, seed: int) -> TrainingConfig:
        return dataclasses.replace(self.training, mode=run.mode, num_heads=run.heads, seed=seed)

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Dict[str, Dict[str, str]]] = None) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_string(f.read(), overrides, source=path)

    @classmethod
    def from_string(
        cls, text: str, overrides: Optional[Dict[str, Dict[str, str]]] = None, source: str = "<string>"
    ) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise InputError(f"cannot parse {source}: {e}") from e
        for section, values in (overrides or {}).items():
            if not parser.has_section(section):
                parser.add_section(section)
            for key, value in values.items():
                parser.set(section, key, str(value))
        return _build(parser, source)


# --- parsing ----------------------------------------------------------------


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _optional_str(text: str) -> Optional[str]:
    return None if text.strip().lower() in ("", "none") else text.strip()


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "all") else int(text)


def _bools(text: str) -> Tuple[bool, ...]:
    return tuple(_bool(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in configparser.ConfigParser.BOOLEAN_STATES:
        return configparser.ConfigParser.BOOLEAN_STATES[value]
    raise ValueError(f"not a boolean: {text!r}")


def _names(text: str) -> List[str]:
    return [v for v in text.replace(",", " ").split() if v]


SCHEMA: Dict[str, Dict[str, Tuple[str, Callable[[str], object]]]] = {
    "data": {
        "kind": ("kind", str.strip),
        "path": ("path", _optional_str),
        "num_classes": ("num_classes", int),
        "image_size": ("image_size", int),
        "channels": ("channels", int),
        "subsample": ("subsample", _optional_int),
        "test_subsample": ("test_subsample", _optional_int),
        "seed": ("seed", int),
        "synthetic_samples": ("synthetic_samples", int),
        "synthetic_test_samples": ("synthetic_test_samples", int),
        "synthetic_size": ("synthetic_size", int),
        "synthetic_noise": ("synthetic_noise", float),
        "synthetic_transform": ("synthetic_transform", str.strip),
    },
    "model": {
        "channels": ("channels", _ints),
        "kernel_size": ("kernel_size", int),
        "pool_after": ("pool_after", _bools),
        "padding": ("padding", str.strip),
    },
    "training": {
        "batch_size": ("batch_size", int),
        "epochs": ("epochs", int),
        "max_iterations": ("max_iterations", _optional_int),
        "learning_rate": ("learning_rate", float),
        "milestones": ("milestones", _ints),
        "lr_decay": ("lr_decay", float),
        "momentum": ("momentum", float),
        "weight_decay": ("weight_decay", float),
        "decay_biases": ("decay_biases", _bool),
        "seed": ("seed", int),
        "mode": ("mode", TrainingMode.parse),
        "heads": ("num_heads", int),
        "transforms": ("transforms", lambda v: TransformationSet(_names(v))),
        "flip_prob": ("flip_prob", float),
        "pad_crop": ("pad_crop", int),
        "flip_average_eval": ("flip_average_eval", _bool),
        "head_average": ("head_average", str.strip),
        "eval_batch_size": ("eval_batch_size", int),
    },
    "experiment": {
        "seeds": ("seeds", _ints),
        "repetitions": ("repetitions", int),
        "output_dir": ("output_dir", str.strip),
        "grid": ("grid", lambda v: tuple(RunSpec.parse(s) for s in v.split(",") if s.strip())),
        "invariance_group": ("invariance_group", lambda v: GroupName(v.strip().lower())),
        "invariance_metric": ("invariance_metric", lambda v: Metric(v.strip().lower())),
        "ensemble_size": ("ensemble_size", int),
        "workers": ("workers", _optional_int),
    },
}


def _section(parser: configparser.ConfigParser, name: str, source: str) -> Dict[str, object]:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in SCHEMA[name]:
            raise InputError(f"{source}: unknown key {key!r} in [{name}], expected one of {sorted(SCHEMA[name])}")
        attr, convert = SCHEMA[name][key]
        try:
            out[attr] = convert(raw)
        except (TypeError, ValueError) as e:
            raise InputError(f"{source}: bad value {raw!r} for {name}.{key}: {e}") from e
    return out


def _build(parser: configparser.ConfigParser, source: str) -> ExperimentConfig:
    unknown = [s for s in parser.sections() if s not in SCHEMA]
    if unknown:
        raise InputError(f"{source}: unknown section(s) {unknown}, expected {sorted(SCHEMA)}")
    data = _section(parser, "data", source)
    model = _section(parser, "model", source)
    training = _section(parser, "training", source)
    experiment = _section(parser, "experiment", source)

    repetitions = experiment.pop("repetitions", None)
    if repetitions is not None and "seeds" not in experiment:
        if repetitions < 1:
            raise InputError(f"{source}: repetitions must be >= 1, got {repetitions}")
        first = training.get("seed", 0)
        experiment["seeds"] = tuple(range(first, first + repetitions))
    data.setdefault("kind", "synthetic" if not data.get("path") else EXPERIMENT_CONF.DATA_KIND)
    return ExperimentConfig(
        data=DataConfig(**data),
        model=ModelConfig(**model),
        training=TrainingConfig(**training),
        **experiment,
    )


def write_config(config: ExperimentConfig, path: str) -> None:
    """Store the resolved configuration next to the results."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["data"] = {k: "none" if v is None else str(v) for k, v in dataclasses.asdict(config.data).items()}
    parser["model"] = {
        "channels": ", ".join(map(str, config.model.channels)),
        "kernel_size": str(config.model.kernel_size),
        "pool_after": ", ".join(str(bool(p)).lower() for p in config.model.pool_after),
        "padding": config.model.padding,
    }
    t = config.training
    parser["training"] = {
        "batch_size": str(t.batch_size),
        "epochs": str(t.epochs),
        "max_iterations": "none" if t.max_iterations is None else str(t.max_iterations),
        "learning_rate": repr(t.learning_rate),
        "milestones": ", ".join(map(str, t.milestones)),
        "lr_decay": repr(t.lr_decay),
        "momentum": repr(t.momentum),
        "weight_decay": repr(t.weight_decay),
        "decay_biases": str(t.decay_biases).lower(),
        "seed": str(t.seed),
        "mode": t.mode.value,
        "heads": str(t.num_heads),
        "flip_prob": repr(t.flip_prob),
        "pad_crop": str(t.pad_crop),
        "flip_average_eval": str(t.flip_average_eval).lower(),
        "head_average": t.head_average.value,
        "eval_batch_size": str(t.eval_batch_size),
    }
    if t.transforms is not None:
        parser["training"]["transforms"] = ", ".join(t.transforms.names)
    parser["experiment"] = {
        "seeds": ", ".join(map(str, config.seeds)),
        "output_dir": config.output_dir,
        "grid": ", ".join(f"{r.mode.value}:{r.heads}" for r in config.grid),
        "invariance_group": config.invariance_group.value,
        "invariance_metric": config.invariance_metric.value,
        "ensemble_size": str(config.ensemble_size),
        "workers": "none" if config.workers is None else str(config.workers),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)

"""
Run configuration: one JSON document per run recipe.

Keys are documented in configs/README.md. Unknown keys are rejected so a
typo never silently falls back to a default.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from augment.pipeline import (
    NO_MODERATE,
    AugPipeline,
    CutMix,
    ManifoldMixup,
    Mixup,
    Moderate,
    PolicyAug,
)
from augment.policy import DEFAULT_POLICY_PATH, PolicyConfigError, load_policy
from dataset.cifar import load_cifar_dir
from dataset.samples import channel_stats
from dataset.synthetic import SyntheticSpec, generate_synthetic
from network.model import ModelSpec
from training.refine import DataSplits, StageConfig, refine_rule_from_dict
from training.schedules import schedule_from_dict

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "DATA_ROOT"


class ConfigError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None, column: Optional[int] = None):
        self.field = field
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if field:
            where.append(f"field '{field}'")
        super().__init__(f"{'; '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class DatasetConfig:
    source: str
    num_classes: int
    synthetic: Optional[SyntheticSpec] = None
    synthetic_seed: int = 0
    path: Optional[str] = None
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    widths: Tuple[int, ...]
    eligible_mix_layers: Tuple[int, ...] = (0, 1)
    drop_rate: float = 0.0
    dtype: str = "float32"
    normalize: bool = True


@dataclass
class RunConfig:
    name: str
    dataset: DatasetConfig
    model: ModelConfig
    stage: StageConfig
    output_dir: str
    seeds: List[int]
    raw: Dict[str, Any]
    source_path: Optional[str] = None

    def stage_for(self, seed: int) -> StageConfig:
        return replace(self.stage, seed=seed)

    def model_spec(self, splits: DataSplits) -> ModelSpec:
        if self.model.normalize:
            mean, std = channel_stats(splits.train)
        else:
            channels = splits.train.image_shape[0]
            mean, std = [0.0] * channels, [1.0] * channels
        return ModelSpec(
            kind=self.model.kind,
            num_classes=splits.train.num_classes,
            input_shape=splits.train.image_shape,
            widths=self.model.widths,
            norm_mean=tuple(float(v) for v in mean),
            norm_std=tuple(float(v) for v in std),
            eligible_mix_layers=self.model.eligible_mix_layers,
            drop_rate=self.model.drop_rate,
            dtype=self.model.dtype,
        )


def parse_override(text: str) -> Tuple[str, Any]:
    """'a.b=value' -> ('a.b', value); value is JSON when it parses, else a plain string."""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like key.path=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def apply_override(raw: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = raw
    for i, part in enumerate(parts[:-1]):
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot descend into a {type(child).__name__}", field=".".join(parts[: i + 1]))
        node = child
    node[parts[-1]] = value


def _take(d: Dict[str, Any], field: str, allowed: Sequence[str]) -> Dict[str, Any]:
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object, got {type(d).__name__}", field=field)
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}; allowed: {list(allowed)}", field=field)
    return d


def _build(field: str, factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(str(e), field=field) from e


def resolve_data_path(path: str, data_root: Optional[str]) -> str:
    """--data-root, else $DATA_ROOT, else relative to the working directory."""
    if os.path.isabs(path):
        return path
    root = data_root or os.getenv(DATA_ROOT_ENV)
    return os.path.join(root, path) if root else path


def _dataset(d: Dict[str, Any], data_root: Optional[str]) -> DatasetConfig:
    _take(
        d,
        "dataset",
        ("source", "num_classes", "per_class_train", "per_class_test", "height", "width", "seed", "path",
         "train_limit", "test_limit"),
    )
    source = d.get("source")
    if source == "synthetic":
        spec = SyntheticSpec(
            num_classes=d.get("num_classes", 4),
            per_class_train=d.get("per_class_train", 500),
            per_class_test=d.get("per_class_test", 100),
            height=d.get("height", 32),
            width=d.get("width", 32),
        )
        _build("dataset", spec.validate)
        return DatasetConfig("synthetic", spec.num_classes, synthetic=spec, synthetic_seed=int(d.get("seed", 0)))
    if source == "cifar":
        if "path" not in d:
            raise ConfigError("cifar source needs a path", field="dataset.path")
        path = resolve_data_path(d["path"], data_root)
        if not os.path.isdir(path):
            raise ConfigError(f"dataset directory not found: {path}", field="dataset.path")
        for key in ("train_limit", "test_limit"):
            if d.get(key) is not None and int(d[key]) < 1:
                raise ConfigError("must be a positive count", field=f"dataset.{key}")
        return DatasetConfig(
            "cifar", int(d.get("num_classes", 10)), path=path,
            train_limit=d.get("train_limit"), test_limit=d.get("test_limit"),
        )
    raise ConfigError(f"source must be 'synthetic' or 'cifar', got {source!r}", field="dataset.source")


def _model(d: Dict[str, Any]) -> ModelConfig:
    _take(d, "model", ("kind", "widths", "eligible_mix_layers", "drop_rate", "dtype", "normalize"))
    if "widths" not in d:
        raise ConfigError("missing", field="model.widths")
    return _build(
        "model",
        ModelConfig,
        kind=d.get("kind", "small_convnet"),
        widths=tuple(d["widths"]),
        eligible_mix_layers=tuple(d.get("eligible_mix_layers", (0, 1))),
        drop_rate=float(d.get("drop_rate", 0.0)),
        dtype=d.get("dtype", "float32"),
        normalize=bool(d.get("normalize", True)),
    )


def _moderate(d: Optional[Dict[str, Any]], field: str) -> Moderate:
    if d is None:
        return NO_MODERATE
    _take(d, field, ("flip_probability", "padding"))
    return _build(field, Moderate, **d)


def _intensive(d: Optional[Dict[str, Any]], field: str):
    if d is None:
        return None
    d = dict(_take(d, field, ("kind", "gamma", "eligible_layers", "apply_probability", "policy", "cutout_size")))
    kind = d.pop("kind", None)
    if kind == "mixup":
        return _build(field, Mixup, **d)
    if kind == "manifold_mixup":
        if "eligible_layers" in d:
            d["eligible_layers"] = tuple(d["eligible_layers"])
        return _build(field, ManifoldMixup, **d)
    if kind == "cutmix":
        return _build(field, CutMix, **d)
    if kind == "autoaugment":
        policy_path = d.pop("policy", "default")
        if policy_path == "default":
            policy_path = DEFAULT_POLICY_PATH
        if not os.path.exists(policy_path):
            raise ConfigError(f"policy file not found: {policy_path}", field=f"{field}.policy")
        try:
            policy = load_policy(policy_path)
        except PolicyConfigError as e:
            raise ConfigError(str(e), field=f"{field}.policy") from e
        return _build(field, PolicyAug, policy, **d)
    raise ConfigError(
        f"kind must be one of mixup, manifold_mixup, cutmix, autoaugment; got {kind!r}", field=f"{field}.kind"
    )


def _pipeline(d: Any, field: str, allow_intensive: bool) -> AugPipeline:
    if d is None:
        return AugPipeline(NO_MODERATE)
    _take(d, field, ("moderate", "intensive") if allow_intensive else ("moderate",))
    moderate = _moderate(d.get("moderate", {}), f"{field}.moderate")
    intensive = _intensive(d.get("intensive"), f"{field}.intensive") if allow_intensive else None
    return AugPipeline(moderate, intensive)


def _stage(d: Dict[str, Any], seed: int, log_wall_time: bool) -> StageConfig:
    _take(
        d,
        "stage",
        ("augment_epochs", "refine_epochs", "batch_size", "eval_every", "stage1_pipeline", "stage2_pipeline",
         "schedule", "refine_lr", "gradual", "momentum", "weight_decay"),
    )
    for key in ("augment_epochs", "refine_epochs", "schedule"):
        if key not in d:
            raise ConfigError("missing", field=f"stage.{key}")
    schedule = _build("stage.schedule", schedule_from_dict, d["schedule"])
    refine_lr = _build("stage.refine_lr", refine_rule_from_dict, d.get("refine_lr", {"kind": "continue_final"}))
    stage1 = _pipeline(d.get("stage1_pipeline", {}), "stage.stage1_pipeline", True)
    stage2 = _pipeline(d.get("stage2_pipeline", {}), "stage.stage2_pipeline", False)
    return _build(
        "stage",
        StageConfig,
        augment_epochs=int(d["augment_epochs"]),
        refine_epochs=int(d["refine_epochs"]),
        stage1_pipeline=stage1,
        stage2_pipeline=stage2,
        schedule=schedule,
        refine_lr=refine_lr,
        batch_size=int(d.get("batch_size", 128)),
        seed=seed,
        eval_every=int(d.get("eval_every", 1)),
        momentum=float(d.get("momentum", 0.9)),
        weight_decay=float(d.get("weight_decay", 1e-4)),
        gradual=bool(d.get("gradual", False)),
        log_wall_time=log_wall_time,
    )


def parse_run_config(raw: Dict[str, Any], data_root: Optional[str] = None, source_path: Optional[str] = None) -> RunConfig:
    _take(raw, "<root>", ("name", "dataset", "model", "stage", "output_dir", "seeds", "log_wall_time"))
    for key in ("dataset", "model", "stage"):
        if key not in raw:
            raise ConfigError("missing section", field=key)
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError(f"seeds must be a nonempty list of non-negative integers, got {seeds!r}", field="seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}", field="seeds")
    name = raw.get("name") or (os.path.splitext(os.path.basename(source_path))[0] if source_path else "run")
    return RunConfig(
        name=name,
        dataset=_dataset(raw["dataset"], data_root),
        model=_model(raw["model"]),
        stage=_stage(raw["stage"], seeds[0], bool(raw.get("log_wall_time", False))),
        output_dir=raw.get("output_dir", os.path.join("runs", name)),
        seeds=list(seeds),
        raw=raw,
        source_path=source_path,
    )


def load_raw_config(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, line=e.lineno, column=e.colno) from e
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    return raw


def load_run_config(
    path: str,
    overrides: Sequence[str] = (),
    data_root: Optional[str] = None,
    seed: Optional[int] = None,
) -> RunConfig:
    raw = copy.deepcopy(load_raw_config(path))
    for text in overrides:
        key, value = parse_override(text)
        apply_override(raw, key, value)
    if seed is not None:
        raw["seeds"] = [seed]
    return parse_run_config(raw, data_root, path)


def load_datasets(config: DatasetConfig) -> DataSplits:
    if config.source == "synthetic":
        train, test = generate_synthetic(config.synthetic, config.synthetic_seed)
        return DataSplits(train, test)
    try:
        train, test = load_cifar_dir(config.path, config.num_classes)
    except FileNotFoundError as e:
        raise ConfigError(str(e), field="dataset.path") from e
    if config.train_limit:
        train = train.subset(range(min(config.train_limit, len(train))))
    if config.test_limit:
        test = test.subset(range(min(config.test_limit, len(test))))
    logger.info(f"loaded CIFAR from {config.path}: {len(train)} train / {len(test)} test")
    return DataSplits(train, test)

"""Task runners: utterance classification (SA, SarD, PP), prosody reconstruction,
future value prediction, and cross-lingual reconstruction."""

from __future__ import annotations

import fcntl
import hashlib
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baseline import TrainedBaseline, rnn_baseline_train
from .cache import FeatureCache
from .features import FeatureProvider
from .ingest import DatasetManifest, UtteranceRecord, bin_sentiment_label, make_folds
from .metrics import compute_metric
from .probe import (
    ProbeConfig,
    ProbeExample,
    SweepRow,
    TaskData,
    TrainedProbe,
    lr_sweep,
    train_probe,
)
from .upstream import CausalityUnsupported, Upstream

logger = logging.getLogger(__name__)

# task id -> (manifest task, label scheme, metric, classes)
CLASSIFICATION_TASKS = {
    "SA-2": ("SA", "binary", "accuracy", 2),
    "SA-7": ("SA", "seven", "accuracy", 7),
    "SarD": ("SarD", None, "f1", 2),
    "PP": ("PP", None, "accuracy", 2),
}
REGRESSION_TASKS = ("ProR", "FVP", "XL-ProR")
HORIZONS = (0.12, 0.24, 0.50, 1.00)
SARD_FOLDS = 5
METRIC_DISPLAY = {"accuracy": "accuracy", "f1": "F1", "mse": "MSE"}


class TaskError(RuntimeError):
    pass


@dataclass(frozen=True)
class HorizonSpec:
    h: float
    stride: int

    def __post_init__(self):
        ms = self.h * 1000
        if abs(ms - round(ms)) > 1e-6 or round(ms) % self.stride:
            raise ValueError(f"horizon {self.h}s is not a whole number of {self.stride} ms frames")

    @property
    def frame_offset(self) -> int:
        return int(round(self.h * 1000)) // self.stride


@dataclass
class TaskResult:
    task: str
    upstream: str
    metric_name: str
    value: float
    per_fold: list[float] | None = None
    horizon: float | None = None
    feature: str | None = None
    language: str | None = None
    layers: list[int] | None = None
    learning_rate: float | None = None
    seed: int = 0
    config_fingerprint: str = ""
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.metric_name in ("accuracy", "F1") and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.metric_name} {self.value} outside [0, 1]")
        if self.metric_name == "MSE" and self.value < 0:
            raise ValueError("negative MSE")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskResult":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TaskRun:
    """A result plus the artifacts needed for follow-up analysis."""

    result: TaskResult
    probe: TrainedProbe | TrainedBaseline | None = None
    sweep: list[SweepRow] = field(default_factory=list)
    data: TaskData | None = None
    fold_probes: list[TrainedProbe] = field(default_factory=list)


def result_fingerprint(upstream: str, task: str, config: ProbeConfig, data_hash: str, **extra) -> str:
    payload = {"upstream": upstream, "task": task, "config": asdict(config), "seed": config.seed,
               "data": data_hash, **extra}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


class ResultsStore:
    """Append-only JSONL store of TaskResult records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, result: TaskResult) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        line = json.dumps(result.to_dict(), sort_keys=True) + "\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                fh.write(line)
                fh.flush()
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def read(self) -> list[TaskResult]:
        if not self.path.exists():
            return []
        rows = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rows.append(TaskResult.from_dict(json.loads(line)))
        return rows


# ----------------------------------------------------------------------------
# data assembly


def _class_label(record: UtteranceRecord, task: str, label_scheme: str) -> int | None:
    _, scheme, _, n_classes = CLASSIFICATION_TASKS[task]
    if record.label is None:
        raise TaskError(f"record {record.id!r} has no label")
    if scheme is not None and label_scheme != "class-index":
        return bin_sentiment_label(float(record.label), scheme)
    label = int(record.label)
    if not 0 <= label < n_classes:
        raise TaskError(f"record {record.id!r}: label {label} outside [0, {n_classes})")
    return label


def _stack_features(provider: FeatureProvider, rec: UtteranceRecord, mode: str, layers, lazy: bool):
    stack = provider.stack(rec, mode)
    if layers is not None:
        stack = stack.select(layers)
    if not lazy:
        return stack.layers, stack.num_frames

    def load(rec=rec):
        s = provider.stack(rec, mode)
        return (s.select(layers) if layers is not None else s).layers

    return load, stack.num_frames


def _trimmed(features, n: int):
    if callable(features):
        return lambda: features()[:, :n]
    return features[:, :n]


def classification_examples(provider: FeatureProvider, task: str, layers=None) -> dict[str, ProbeExample]:
    manifest = provider.manifest
    lazy = provider.cache is not None
    out = {}
    for rec in manifest.records:
        label = _class_label(rec, task, manifest.label_scheme)
        if label is None:
            continue
        feats, _ = _stack_features(provider, rec, "full", layers, lazy)
        out[rec.id] = ProbeExample(feats, label, id=rec.id)
    return out


def regression_examples(provider: FeatureProvider, feature: str, offset: int = 0, mode: str = "full",
                        layers=None) -> dict[str, ProbeExample]:
    """Frame-level examples; with ``offset`` k, features at frame i pair with the target at i + k."""
    lazy = provider.cache is not None
    out = {}
    for rec in provider.manifest.records:
        feats, T = _stack_features(provider, rec, mode, layers, lazy)
        track = provider.aligned_track(rec, feature, T)
        if T - offset < 1:
            logger.info("skipping %s: %d frames <= horizon offset %d", rec.id, T, offset)
            continue
        out[rec.id] = ProbeExample(
            _trimmed(feats, T - offset), track.values[offset:].astype(np.float32),
            track.voiced[offset:].copy(), id=rec.id,
        )
    return out


def _split(manifest: DatasetManifest, examples: dict[str, ProbeExample], name: str) -> list[ProbeExample]:
    return [examples[r.id] for r in manifest.records if r.split == name and r.id in examples]


def _fixed_split_data(manifest, examples, objective, metric, n_classes, task) -> TaskData:
    data = TaskData(_split(manifest, examples, "train"), _split(manifest, examples, "dev"),
                    _split(manifest, examples, "test"), objective, metric, n_classes, task)
    for name in ("train", "dev", "test"):
        if not getattr(data, name):
            raise TaskError(f"{task}: split {name!r} is empty")
    return data


def _check_classes(data: TaskData, task: str) -> None:
    present = {int(ex.target) for ex in data.train}
    if data.num_classes == 2 and len(present) < 2:
        raise TaskError(f"{task}: training split has a single class after label binning")


def _fit(data: TaskData, config: ProbeConfig, sweep: bool, upstream: str, baseline: str | None = None):
    if baseline == "rnn":
        def train_fn(d, c, upstream=""):
            return rnn_baseline_train(d, c, upstream)
    else:
        train_fn = train_probe
    if sweep:
        probe, rows = lr_sweep(data, config, upstream=upstream, train_fn=train_fn)
        chosen = next(r for r in rows if r.lr == probe.config.learning_rate and not r.diverged)
        return probe, rows, chosen.test_metric
    probe = train_fn(data, config, upstream=upstream)
    test = probe.evaluate(data.test)
    dev = probe.evaluate(data.dev) if data.dev else None
    return probe, [SweepRow(config.learning_rate, dev, test, config.train_steps, config.seed)], test


# ----------------------------------------------------------------------------
# runners


def run_classification_task(task: str, upstream: Upstream, manifest: DatasetManifest, *,
                            config: ProbeConfig | None = None, cache: FeatureCache | None = None,
                            sweep: bool = True, layers: Sequence[int] | None = None,
                            folds: int = SARD_FOLDS) -> TaskRun:
    if task not in CLASSIFICATION_TASKS:
        raise TaskError(f"unknown classification task {task!r}")
    source_task, _, metric, n_classes = CLASSIFICATION_TASKS[task]
    if manifest.task != source_task:
        raise TaskError(f"{task} needs a {source_task} manifest, got {manifest.task}")
    config = config or ProbeConfig.for_task(source_task)
    provider = FeatureProvider(upstream, manifest, cache)
    examples = classification_examples(provider, task, layers)
    name = upstream.spec.name
    extra = {"layers": list(layers) if layers is not None else None}
    fp = result_fingerprint(name, task, config, manifest.content_hash(), sweep=sweep, **extra)

    if task == "SarD":
        assignment = make_folds(manifest, folds, config.seed)
        per_fold, probes, all_rows = [], [], []
        for f in range(folds):
            dev_fold = (f + 1) % folds
            by_fold = lambda k: [examples[i] for i in assignment.fold(k) if i in examples]  # noqa: E731
            train = [ex for k in range(folds) if k not in (f, dev_fold) for ex in by_fold(k)]
            data = TaskData(train, by_fold(dev_fold), by_fold(f), "classification", metric, n_classes, task)
            _check_classes(data, task)
            probe, rows, test = _fit(data, config, sweep, name)
            per_fold.append(float(test))
            probes.append(probe)
            all_rows += rows
        value = float(np.mean(per_fold))
        result = TaskResult(task, name, METRIC_DISPLAY[metric], value, per_fold=per_fold,
                            layers=extra["layers"], seed=config.seed, config_fingerprint=fp)
        return TaskRun(result, probes[0], all_rows, None, probes)

    data = _fixed_split_data(manifest, examples, "classification", metric, n_classes, task)
    _check_classes(data, task)
    probe, rows, test = _fit(data, config, sweep, name)
    result = TaskResult(task, name, METRIC_DISPLAY[metric], float(test), layers=extra["layers"],
                        learning_rate=probe.config.learning_rate, seed=config.seed, config_fingerprint=fp)
    return TaskRun(result, probe, rows, data)


def _regression_run(task, upstream, manifest, feature, *, config, cache, sweep, layers, offset=0,
                    mode="full", baseline=None, horizon=None, language=None) -> TaskRun:
    if feature not in ("pitch", "energy"):
        raise TaskError(f"unknown prosody feature {feature!r}")
    if not manifest.records:
        raise TaskError(f"{task}: empty manifest")
    config = config or ProbeConfig.for_task(task)
    provider = FeatureProvider(upstream, manifest, cache)
    examples = regression_examples(provider, feature, offset, mode, layers)
    data = _fixed_split_data(manifest, examples, "regression", "mse", 1, task)
    if not any(ex.mask.any() for ex in data.test):
        raise TaskError(f"{task}: no voiced frames in the test split")
    name = upstream.spec.name + ("+rnn" if baseline == "rnn" else "")
    fp = result_fingerprint(name, task, config, manifest.content_hash(), feature=feature, horizon=horizon,
                            layers=list(layers) if layers is not None else None, sweep=sweep)
    probe, rows, test = _fit(data, config, sweep, name, baseline)
    result = TaskResult(task, name, "MSE", float(test), horizon=horizon, feature=feature, language=language,
                        layers=list(layers) if layers is not None else None,
                        learning_rate=probe.config.learning_rate, seed=config.seed, config_fingerprint=fp)
    return TaskRun(result, probe, rows, data)


def run_pror(upstream: Upstream, feature: str, manifest: DatasetManifest, *, config: ProbeConfig | None = None,
             cache: FeatureCache | None = None, sweep: bool = True,
             layers: Sequence[int] | None = None) -> TaskRun:
    return _regression_run("ProR", upstream, manifest, feature, config=config, cache=cache, sweep=sweep,
                           layers=layers)


def run_fvp(upstream: Upstream, feature: str, horizon: float | HorizonSpec, manifest: DatasetManifest, *,
            baseline: str | None = None, config: ProbeConfig | None = None, cache: FeatureCache | None = None,
            sweep: bool = True) -> TaskRun:
    """Predict the target ``horizon`` seconds ahead from causal features.

    ``baseline="rnn"`` trains the FBANK + RNN system on a single-layer
    upstream; otherwise the upstream must be causal-capable and a linear
    probe reads its causal-mode features.
    """
    if not isinstance(horizon, HorizonSpec):
        horizon = HorizonSpec(horizon, upstream.spec.stride)
    if baseline is None and not upstream.spec.causal_capable:
        raise CausalityUnsupported(f"FVP needs a causal-capable upstream; {upstream.spec.name!r} is not")
    if baseline == "rnn" and upstream.spec.num_layers != 1:
        raise TaskError("the RNN baseline expects a single-layer FBANK upstream")
    config = replace(config or ProbeConfig.for_task("FVP"), horizon=horizon.h)
    return _regression_run("FVP", upstream, manifest, feature, config=config, cache=cache, sweep=sweep,
                           layers=None, offset=horizon.frame_offset, mode="causal", baseline=baseline,
                           horizon=horizon.h)


def run_crosslingual(upstream: Upstream, feature: str, manifest: DatasetManifest, *,
                     config: ProbeConfig | None = None, cache: FeatureCache | None = None,
                     sweep: bool = True) -> TaskRun:
    if not manifest.records:
        raise TaskError("XL-ProR: empty manifest")
    langs = manifest.languages
    if langs == {"en"}:
        raise TaskError("XL-ProR expects a non-English manifest")
    language = "+".join(sorted(langs))
    return _regression_run("XL-ProR", upstream, manifest, feature, config=config, cache=cache, sweep=sweep,
                           layers=None, language=language)


def check_horizon_monotonicity(results: Sequence[TaskResult]) -> list[str]:
    """Warn (never fail) when FVP MSE decreases with a longer horizon for a system/feature pair."""
    groups: dict[tuple, list[TaskResult]] = {}
    for r in results:
        if r.task == "FVP" and r.horizon is not None:
            groups.setdefault((r.upstream, r.feature), []).append(r)
    messages = []
    for (system, feat), rows in groups.items():
        rows = sorted(rows, key=lambda r: r.horizon)
        for a, b in zip(rows, rows[1:]):
            if b.value < a.value:
                msg = f"{system}/{feat}: MSE drops from {a.value:.4g} at {a.horizon}s to {b.value:.4g} at {b.horizon}s"
                warnings.warn(msg, stacklevel=2)
                messages.append(msg)
    return messages


__all__ = [
    "CLASSIFICATION_TASKS",
    "HORIZONS",
    "HorizonSpec",
    "ResultsStore",
    "TaskError",
    "TaskResult",
    "TaskRun",
    "check_horizon_monotonicity",
    "compute_metric",
    "rnn_baseline_train",
    "run_classification_task",
    "run_crosslingual",
    "run_fvp",
    "run_pror",
]

"""Layerwise contribution analysis and layer-limited feature integration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .containers import LayerFeatureStack
from .probe import TrainedProbe


@dataclass
class ContributionProfile:
    upstream: str
    task: str
    c: np.ndarray
    norms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.norms = np.asarray(self.norms, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @property
    def best_layer(self) -> int:
        return int(np.argmax(self.c))

    def consistent(self) -> bool:
        """Re-check c = norms * weights from the stored fields."""
        return bool(np.array_equal(self.c, self.norms * self.weights))

    def to_dict(self) -> dict:
        return {"upstream": self.upstream, "task": self.task, "c": self.c.tolist(),
                "norms": self.norms.tolist(), "weights": self.weights.tolist()}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ContributionProfile":
        return cls(**json.loads(Path(path).read_text()))


def mean_layer_norms(stacks: Iterable[np.ndarray | LayerFeatureStack]) -> np.ndarray:
    """Per-layer L2 norm of each frame, averaged over frames, then over utterances."""
    per_utt = []
    for s in stacks:
        layers = s.layers if isinstance(s, LayerFeatureStack) else np.asarray(s)
        per_utt.append(np.linalg.norm(layers.astype(np.float64), axis=-1).mean(axis=1))
    if not per_utt:
        raise ValueError("empty test set")
    return np.mean(per_utt, axis=0)


def layer_contribution(test_features: Iterable, probe: TrainedProbe, weight_mode: str = "normalized",
                       upstream: str | None = None, task: str | None = None) -> ContributionProfile:
    """c_i = mean ||x_i||_2 over the test data times the probe's weight for layer i.

    ``weight_mode="raw"`` uses the unnormalized learned scalars instead.
    """
    norms = mean_layer_norms(test_features)
    if len(norms) != probe.num_layers:
        raise ValueError(f"features have {len(norms)} layers, probe has {probe.num_layers}")
    if weight_mode == "normalized":
        weights = probe.layer_weights.normalized()
    elif weight_mode == "raw":
        weights = probe.layer_weights.raw
    else:
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    weights = np.asarray(weights, dtype=np.float64)
    return ContributionProfile(upstream or probe.upstream, task or probe.task, norms * weights, norms, weights)


@dataclass
class IntegrationSpec:
    layer_sets: tuple[tuple[int, ...], tuple[int, ...]]
    best_layer: int

    def __post_init__(self):
        a, b = self.layer_sets
        if len(a) != len(b):
            raise ValueError("both layer sets must have the same number of layers")

    @classmethod
    def from_best(cls, best: int, num_layers: int) -> "IntegrationSpec":
        """(0, 1, best) against best with its two neighbours, shifted inward at the edges."""
        if not 0 <= best < num_layers:
            raise IndexError(f"best layer {best} out of range for {num_layers} layers")
        if num_layers < 3:
            raise ValueError("integration needs at least 3 layers")
        lo = min(max(best - 1, 0), num_layers - 3)
        return cls(((0, 1, best), (lo, lo + 1, lo + 2)), best)

    @classmethod
    def from_profile(cls, profile: ContributionProfile) -> "IntegrationSpec":
        return cls.from_best(profile.best_layer, len(profile.c))

    def validate(self, num_layers: int) -> None:
        for s in self.layer_sets:
            bad = [i for i in s if not 0 <= i < num_layers]
            if bad:
                raise IndexError(f"layer indices {bad} out of range for {num_layers} layers")


def integrate_layers(run_fn: Callable, spec: IntegrationSpec, num_layers: int) -> tuple:
    """Run one task under both layer sets with the same protocol.

    ``run_fn(layers)`` must return a TaskRun for the task trained on the
    concatenation of ``layers``. Returns both runs, first set first.
    """
    spec.validate(num_layers)
    runs = tuple(run_fn(list(s)) for s in spec.layer_sets)
    counts = [_param_count(r) for r in runs]
    if counts[0] != counts[1]:
        raise AssertionError(f"integration settings have unequal head sizes: {counts}")
    return runs


def _param_count(run) -> int:
    probes = run.fold_probes or [run.probe]
    return probes[0].parameter_count()


def integration_table(runs: Sequence, spec: IntegrationSpec) -> str:
    """Tab-separated two-column comparison (one row per run pair)."""
    header = "\t".join(["task", "upstream", "metric"] + [str(tuple(s)) for s in spec.layer_sets])
    r0, r1 = (r.result for r in runs)
    row = "\t".join([r0.task, r0.upstream, r0.metric_name, f"{r0.value:.4f}", f"{r1.value:.4f}"])
    return header + "\n" + row + "\n"


def profile_heatmap_rows(profiles: Sequence[ContributionProfile]) -> tuple[list[str], np.ndarray]:
    """Row-normalized contribution matrix (rows = upstreams) for display; raw c stays in the data files."""
    width = max(len(p.c) for p in profiles)
    mat = np.full((len(profiles), width), np.nan)
    for i, p in enumerate(profiles):
        mat[i, : len(p.c)] = p.c / (p.c.max() if p.c.max() > 0 else 1.0)
    return [p.upstream for p in profiles], mat

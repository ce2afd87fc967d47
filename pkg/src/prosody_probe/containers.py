from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LayerFeatureStack:
    """Layerwise frame features from one upstream pass: ``layers`` is (L, T, D) float32."""

    layers: np.ndarray
    stride: float
    utterance_id: str = ""
    mode: str = "full"

    def __post_init__(self):
        self.layers = np.ascontiguousarray(self.layers, dtype=np.float32)
        if self.layers.ndim != 3:
            raise ValueError(f"layers must be (L, T, D), got shape {self.layers.shape}")
        if self.mode not in ("full", "causal"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def num_frames(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.layers).all())

    def select(self, indices) -> "LayerFeatureStack":
        """Concatenate the chosen layers along the feature axis into a single-layer stack."""
        indices = list(indices)
        L = self.num_layers
        bad = [i for i in indices if not 0 <= i < L]
        if bad:
            raise IndexError(f"layer indices {bad} out of range for {L} layers")
        cat = np.concatenate([self.layers[i] for i in indices], axis=-1)
        return LayerFeatureStack(cat[None], self.stride, self.utterance_id, self.mode)


@dataclass
class ProsodyTrack:
    """Per-frame log-scale prosody values with a voicing mask."""

    kind: str
    values: np.ndarray
    voiced: np.ndarray
    hop: float
    utterance_id: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.voiced = np.ascontiguousarray(self.voiced, dtype=bool)
        if self.kind not in ("pitch", "energy"):
            raise ValueError(f"unknown track kind {self.kind!r}")
        if self.values.shape != self.voiced.shape or self.values.ndim != 1:
            raise ValueError("values and voiced must be 1-D arrays of equal length")
        if not self.hop > 0:
            raise ValueError("hop must be > 0")
        if not np.isfinite(self.values[self.voiced]).all():
            raise ValueError("non-finite values on voiced frames")

    def __len__(self) -> int:
        return len(self.values)

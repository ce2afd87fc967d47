from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..containers import LayerFeatureStack


class UpstreamError(RuntimeError):
    pass


class CausalityUnsupported(UpstreamError):
    pass


@dataclass
class UpstreamSpec:
    name: str
    num_layers: int
    dim: int
    stride: int
    causal_capable: bool = False
    checkpoint_ref: str = ""
    adapter: str = "external"
    # Descriptive metadata (network, #params, pre-training corpus/objective).
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stride not in (10, 20):
            raise ValueError(f"{self.name}: stride must be 10 or 20 ms, got {self.stride}")
        if self.num_layers < 1 or self.dim < 1:
            raise ValueError(f"{self.name}: num_layers and dim must be >= 1")


class Upstream:
    """A frozen feature extractor exposing layerwise frame features.

    Subclasses implement ``_extract`` and, if they hold parameters,
    ``parameter_checksum``.
    """

    version = "1"

    def __init__(self, spec: UpstreamSpec):
        self.spec = spec

    def extract(self, wav: np.ndarray, mode: str = "full", utterance_id: str = "") -> LayerFeatureStack:
        if mode not in ("full", "causal"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "causal" and not self.spec.causal_capable:
            raise CausalityUnsupported(f"upstream {self.spec.name!r} cannot run in causal mode")
        wav = np.asarray(wav, dtype=np.float64)
        hop = self.spec.stride * 16
        if wav.ndim != 1 or len(wav) < hop:
            raise ValueError("waveform must be mono and at least one frame long")
        stack = self._extract(wav, mode)
        stack.utterance_id = utterance_id
        stack.mode = mode
        if stack.num_layers != self.spec.num_layers or stack.dim != self.spec.dim:
            raise UpstreamError(
                f"{self.spec.name}: produced {stack.layers.shape[::2]} (L, D), "
                f"registry declares ({self.spec.num_layers}, {self.spec.dim})"
            )
        if not stack.is_finite():
            raise UpstreamError(f"{self.spec.name}: non-finite features for {utterance_id!r}")
        return stack

    def _extract(self, wav: np.ndarray, mode: str) -> LayerFeatureStack:
        raise NotImplementedError

    def parameter_checksum(self) -> str:
        return hashlib.sha256(self.spec.name.encode()).hexdigest()


def torch_checksum(module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def extract_layer_features(wav, upstream: Upstream, mode: str = "full", utterance_id: str = "") -> LayerFeatureStack:
    return upstream.extract(wav, mode, utterance_id)


@dataclass
class CausalityReport:
    upstream: str
    mode: str
    cut_frames: list[int]
    deviations: list[float]
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviations) if self.deviations else 0.0

    @property
    def passed(self) -> bool:
        return self.max_deviation < self.tolerance

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict} {self.upstream} ({self.mode}): max |dev| = {self.max_deviation:.3g} "
            f"at cuts {self.cut_frames} (tol {self.tolerance:g})"
        )


def assert_causality(
    upstream: Upstream,
    probe_audio: np.ndarray,
    n_cuts: int = 3,
    tolerance: float = 1e-5,
    seed: int = 0,
) -> CausalityReport:
    """Future-perturbation test.

    For each cut frame ``c``, every sample from ``(c + 1) * hop`` on is replaced
    by noise and the outputs at frames ``<= c`` are compared. Upstreams that
    are not causal-capable are probed in full mode (and are expected to fail).
    """
    mode = "causal" if upstream.spec.causal_capable else "full"
    wav = np.asarray(probe_audio, dtype=np.float64)
    hop = upstream.spec.stride * 16
    base = upstream.extract(wav, mode).layers
    T = base.shape[1]
    cuts = sorted({int(c) for c in np.linspace(T // 4, 3 * T // 4, max(n_cuts, 3))})
    rng = np.random.default_rng(seed)
    devs = []
    for c in cuts:
        perturbed = wav.copy()
        start = (c + 1) * hop
        perturbed[start:] = rng.uniform(-1, 1, len(wav) - start)
        out = upstream.extract(perturbed, mode).layers
        t = min(c + 1, out.shape[1], T)
        devs.append(float(np.max(np.abs(out[:, :t] - base[:, :t]))))
    return CausalityReport(upstream.spec.name, mode, cuts, devs, tolerance)

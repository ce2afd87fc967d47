"""Concrete upstream adapters: FBANK, the test mocks, and Hugging Face speech encoders."""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np
import torch
from torch import nn

from ..containers import LayerFeatureStack
from .base import Upstream, UpstreamError, UpstreamSpec, torch_checksum
from .fbank import fbank_checksum, fbank_features


class FbankUpstream(Upstream):
    def __init__(self, spec: UpstreamSpec | None = None):
        super().__init__(spec or UpstreamSpec("fbank", 1, 240, 10, causal_capable=True, adapter="fbank"))

    def _extract(self, wav, mode):
        return fbank_features(wav, mode)

    def parameter_checksum(self) -> str:
        return fbank_checksum()


def _frames(wav: np.ndarray, hop: int) -> np.ndarray:
    """Non-overlapping (T, hop) frames; frame t owns samples [t*hop, (t+1)*hop)."""
    T = len(wav) // hop
    return wav[: T * hop].reshape(T, hop)


class MockUpstream(Upstream):
    """Deterministic pseudo-random layers computed frame-locally from the waveform.

    Layer ``i`` at frame ``t`` is a fixed random projection of the RMS-normalized
    samples owned by frame ``t``, so outputs are causal by construction. If
    ``planted_layer`` is set, column 0 of that layer is overwritten with the
    signal returned by ``planted_fn(wav)`` (length T), scaled by ``planted_gain``.
    """

    def __init__(
        self,
        num_layers: int = 6,
        dim: int = 16,
        stride: int = 20,
        seed: int = 0,
        planted_layer: int | None = None,
        planted_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        planted_gain: float = 1.0,
        name: str = "mock",
    ):
        super().__init__(UpstreamSpec(name, num_layers, dim, stride, causal_capable=True, adapter="mock"))
        if planted_layer is not None and not 0 <= planted_layer < num_layers:
            raise ValueError("planted_layer out of range")
        if planted_layer is not None and planted_fn is None:
            raise ValueError("planted_layer requires planted_fn")
        self.seed = seed
        self.planted_layer = planted_layer
        self.planted_fn = planted_fn
        self.planted_gain = planted_gain
        hop = stride * 16
        rng = np.random.default_rng(seed)
        self.projections = rng.standard_normal((num_layers, hop, dim)) / np.sqrt(hop)

    def _extract(self, wav, mode):
        hop = self.spec.stride * 16
        frames = _frames(wav, hop)
        rms = np.sqrt(np.mean(frames**2, axis=1, keepdims=True))
        unit = frames / (rms + 1e-8)
        layers = np.einsum("th,lhd->ltd", unit, self.projections)
        if self.planted_layer is not None:
            signal = np.asarray(self.planted_fn(wav), dtype=np.float64)
            T = layers.shape[1]
            col = np.zeros(T)
            n = min(T, len(signal))
            col[:n] = signal[:n]
            layers[self.planted_layer, :, 0] = self.planted_gain * col
        return LayerFeatureStack(layers, float(self.spec.stride))

    def parameter_checksum(self) -> str:
        return hashlib.sha256(self.projections.tobytes()).hexdigest()


class _TinyEncoder(nn.Module):
    def __init__(self, hop: int, dim: int, n_blocks: int, n_heads: int):
        super().__init__()
        self.proj = nn.Linear(hop, dim)
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(dim, n_heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True)
            for _ in range(n_blocks)
        )

    def forward(self, frames: torch.Tensor, causal: bool) -> list[torch.Tensor]:
        x = self.proj(frames)
        outs = [x]
        mask = None
        if causal:
            T = frames.shape[1]
            mask = torch.triu(torch.full((T, T), float("-inf")), diagonal=1)
        for block in self.blocks:
            x = block(x, src_mask=mask)
            outs.append(x)
        return outs


class MockTransformerUpstream(Upstream):
    """Small seeded transformer over raw frames.

    Layer 0 is the frame projection, layers 1..n_blocks the block outputs.
    With ``causal_capable=True`` causal mode applies a lower-triangular
    attention mask; with ``False`` the model is bidirectional only.
    """

    def __init__(self, n_blocks: int = 3, dim: int = 32, stride: int = 20, n_heads: int = 4,
                 seed: int = 0, causal_capable: bool = True, name: str = "mock-transformer"):
        super().__init__(UpstreamSpec(name, n_blocks + 1, dim, stride, causal_capable=causal_capable,
                                      adapter="mock-transformer"))
        gen = torch.Generator().manual_seed(seed)
        with torch.random.fork_rng():
            torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
            self.model = _TinyEncoder(stride * 16, dim, n_blocks, n_heads).double().eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    def _extract(self, wav, mode):
        frames = torch.from_numpy(_frames(wav, self.spec.stride * 16))[None]
        with torch.no_grad():
            outs = self.model(frames, causal=(mode == "causal"))
        layers = torch.stack([o[0] for o in outs]).numpy()
        return LayerFeatureStack(layers, float(self.spec.stride))

    def parameter_checksum(self) -> str:
        return torch_checksum(self.model)


class HFUpstream(Upstream):
    """Adapter over a Hugging Face wav2vec 2.0 / HuBERT / WavLM style encoder.

    ``hidden_states[0]`` (the projected convolutional features entering the
    transformer) is exposed as layer 0, block outputs as layers 1..N. Output
    frames are padded or clipped to ``len(wav) // hop``.

    Causal mode recomputes the model on each growing prefix and keeps the last
    frame, so frame ``t`` never sees samples past ``(t + 1) * hop``. This is
    exact but costs one forward pass per frame; ``max_context_s`` bounds the
    prefix to a trailing window.
    """

    def __init__(self, spec: UpstreamSpec, model: nn.Module | None = None,
                 normalize_input: bool | None = None, max_context_s: float | None = None):
        super().__init__(spec)
        self._model = model
        self.normalize_input = spec.meta.get("normalize_input", False) if normalize_input is None else normalize_input
        self.max_context_s = max_context_s
        if model is not None:
            self._freeze(model)

    @staticmethod
    def _freeze(model):
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)

    @property
    def model(self) -> nn.Module:
        if self._model is None:
            try:
                from transformers import AutoModel

                self._model = AutoModel.from_pretrained(self.spec.checkpoint_ref)
            except Exception as err:
                raise UpstreamError(f"cannot load checkpoint {self.spec.checkpoint_ref!r}: {err}") from err
            self._freeze(self._model)
        return self._model

    def _forward(self, wav: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(wav).float()[None]
        if self.normalize_input:
            x = (x - x.mean()) / torch.sqrt(x.var() + 1e-7)
        with torch.no_grad():
            out = self.model(x, output_hidden_states=True)
        return torch.stack([h[0] for h in out.hidden_states]).numpy()

    def _extract(self, wav, mode):
        hop = self.spec.stride * 16
        T = len(wav) // hop
        if mode == "full":
            layers = self._forward(wav)
        else:
            # left pad so the last conv frame of each prefix ends at the frame edge
            receptive = self.spec.meta.get("receptive_field", 400)
            padded = np.concatenate([np.zeros(receptive - hop), wav])
            ctx = None if self.max_context_s is None else int(self.max_context_s * 16000)
            cols = []
            for t in range(T):
                end = (t + 1) * hop + receptive - hop
                start = 0 if ctx is None else max(0, end - ctx)
                cols.append(self._forward(padded[start:end])[:, -1])
            layers = np.stack(cols, axis=1)
        if layers.shape[1] < T:
            layers = np.concatenate([layers, np.repeat(layers[:, -1:], T - layers.shape[1], axis=1)], axis=1)
        return LayerFeatureStack(layers[:, :T], float(self.spec.stride))

    def parameter_checksum(self) -> str:
        return torch_checksum(self.model)

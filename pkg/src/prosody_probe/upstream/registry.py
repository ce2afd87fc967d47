"""Upstream registry: name -> spec, plus adapter construction.

Registry files are JSON objects mapping an upstream name to its fields::

    {"hubert_base": {"checkpoint_ref": "facebook/hubert-base-ls960", "stride": 20,
                     "num_layers": 13, "dim": 768, "causal_capable": true,
                     "adapter": "hf"}}
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from .adapters import FbankUpstream, HFUpstream, MockTransformerUpstream, MockUpstream
from .base import Upstream, UpstreamError, UpstreamSpec


def _spec(name, L, D, stride, causal, ref, adapter, network, params_m, corpus, objective, **meta):
    meta.update(network=network, params_m=params_m, corpus=corpus, pretraining=objective)
    return UpstreamSpec(name, L, D, stride, causal, ref, adapter, meta)


# Layer counts include layer 0 (the representation entering the first block).
# Entries with adapter "external" need a user-registered adapter; their L and D
# follow the common benchmark-toolkit exports and can be overridden by file.
BUILTIN_SPECS: dict[str, UpstreamSpec] = {
    s.name: s
    for s in [
        _spec("fbank", 1, 240, 10, True, "", "fbank", "-", 0.0, "-", "-"),
        _spec("apc", 4, 512, 10, True, "apc", "external", "3-GRU", 4.11, "LS 360 hr", "F-G"),
        _spec("vq_apc", 4, 512, 10, False, "vq_apc", "external", "3-GRU", 4.63, "LS 360 hr", "F-G + VQ"),
        _spec("npc", 5, 512, 10, False, "npc", "external", "4-Conv, 4-Masked Conv", 19.38, "LS 360 hr", "M-G + VQ"),
        _spec("mockingjay", 13, 768, 10, True, "mockingjay", "external", "12-Trans", 85.12, "LS 360 hr", "time M-G"),
        _spec("tera", 4, 768, 10, False, "tera", "external", "3-Trans", 21.33, "LS 960 hr", "time/freq M-G"),
        _spec("modified_cpc", 2, 256, 10, True, "modified_cpc", "external", "5-Conv, 1-LSTM", 1.84, "LL 60k hr", "F-C"),
        _spec("wav2vec", 2, 512, 10, True, "wav2vec", "external", "19-Conv", 32.54, "LS 960 hr", "F-C"),
        _spec("vq_wav2vec", 2, 512, 10, False, "vq_wav2vec", "external", "20-Conv", 34.15, "LS 960 hr", "F-C + VQ"),
        _spec("distilhubert", 3, 768, 20, False, "ntu-spml/distilhubert", "hf", "7-Conv 2-Trans", 23.49,
              "LS 960 hr", "KD"),
        _spec("wav2vec2_base", 13, 768, 20, True, "facebook/wav2vec2-base", "hf", "7-Conv 12-Trans", 95.04,
              "LS 960 hr", "M-C + VQ"),
        _spec("wav2vec2_large", 25, 1024, 20, True, "facebook/wav2vec2-large-lv60", "hf", "7-Conv 24-Trans",
              317.38, "LL 60k hr", "M-C + VQ", normalize_input=True),
        _spec("hubert_base", 13, 768, 20, True, "facebook/hubert-base-ls960", "hf", "7-Conv 12-Trans", 94.68,
              "LS 960 hr", "M-P + VQ"),
        _spec("hubert_large", 25, 1024, 20, True, "facebook/hubert-large-ll60k", "hf", "7-Conv 24-Trans", 316.61,
              "LL 60k hr", "M-P + VQ", normalize_input=True),
        # gated relative position bias: masking attention alone would not match training
        _spec("wavlm_base", 13, 768, 20, False, "microsoft/wavlm-base", "hf", "7-Conv 12-Trans", 94.68,
              "LL 60k hr", "M-P + VQ"),
        _spec("wavlm_large", 25, 1024, 20, False, "microsoft/wavlm-large", "hf", "7-Conv 24-Trans", 316.62,
              "Mix 94k hr", "M-P + VQ", normalize_input=True),
        _spec("mock", 6, 16, 20, True, "", "mock", "random projection", 0.0, "-", "-"),
        _spec("mock_transformer", 4, 32, 20, True, "", "mock-transformer", "3-Trans", 0.0, "-", "-"),
    ]
}

_ADAPTERS: dict[str, Callable[[UpstreamSpec], Upstream]] = {
    "fbank": lambda spec: FbankUpstream(spec),
    "hf": lambda spec: HFUpstream(spec),
    "mock": lambda spec: MockUpstream(spec.num_layers, spec.dim, spec.stride,
                                      seed=spec.meta.get("seed", 0), name=spec.name),
    "mock-transformer": lambda spec: MockTransformerUpstream(
        spec.num_layers - 1, spec.dim, spec.stride, seed=spec.meta.get("seed", 0),
        causal_capable=spec.causal_capable, name=spec.name),
}


def register_adapter(kind: str, factory: Callable[[UpstreamSpec], Upstream]) -> None:
    _ADAPTERS[kind] = factory


def load_registry(path: str | Path | None = None) -> dict[str, UpstreamSpec]:
    specs = dict(BUILTIN_SPECS)
    if path is None:
        return specs
    raw = json.loads(Path(path).read_text())
    for name, fields in raw.items():
        fields = dict(fields)
        meta = fields.pop("meta", {})
        base = BUILTIN_SPECS.get(name)
        merged = dict(
            num_layers=base.num_layers if base else None,
            dim=base.dim if base else None,
            stride=base.stride if base else None,
            causal_capable=base.causal_capable if base else False,
            checkpoint_ref=base.checkpoint_ref if base else "",
            adapter=base.adapter if base else "external",
        )
        merged.update(fields)
        missing = [k for k in ("num_layers", "dim", "stride") if merged[k] is None]
        if missing:
            raise ValueError(f"registry entry {name!r} missing {missing}")
        specs[name] = UpstreamSpec(name=name, meta={**(base.meta if base else {}), **meta}, **merged)
    return specs


def get_upstream(name: str, registry: dict[str, UpstreamSpec] | None = None) -> Upstream:
    registry = BUILTIN_SPECS if registry is None else registry
    if name not in registry:
        raise UpstreamError(f"unknown upstream {name!r}; known: {sorted(registry)}")
    spec = registry[name]
    factory = _ADAPTERS.get(spec.adapter)
    if factory is None:
        raise UpstreamError(
            f"upstream {name!r} uses adapter {spec.adapter!r}, which is not registered; "
            "call register_adapter() with a loader for its checkpoint"
        )
    return factory(spec)

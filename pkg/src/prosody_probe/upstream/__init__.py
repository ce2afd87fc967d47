from .adapters import FbankUpstream, HFUpstream, MockTransformerUpstream, MockUpstream
from .base import (
    CausalityReport,
    CausalityUnsupported,
    Upstream,
    UpstreamError,
    UpstreamSpec,
    assert_causality,
    extract_layer_features,
)
from .fbank import fbank_features
from .registry import BUILTIN_SPECS, get_upstream, load_registry, register_adapter

__all__ = [
    "BUILTIN_SPECS",
    "CausalityReport",
    "CausalityUnsupported",
    "FbankUpstream",
    "HFUpstream",
    "MockTransformerUpstream",
    "MockUpstream",
    "Upstream",
    "UpstreamError",
    "UpstreamSpec",
    "assert_causality",
    "extract_layer_features",
    "fbank_features",
    "get_upstream",
    "load_registry",
    "register_adapter",
]

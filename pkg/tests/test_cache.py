import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from prosody_probe.cache import CacheKey, FeatureCache, decode_payload, encode_payload
from prosody_probe.containers import LayerFeatureStack, ProsodyTrack


def _stack(seed=0, shape=(3, 7, 5)):
    return LayerFeatureStack(np.random.default_rng(seed).standard_normal(shape), 20.0, "utt-é", "causal")


def _key(uid="u1", kind="features"):
    return CacheKey("hubert_base", "full", uid, kind, "v1")


def _same_stack(a, b):
    return (a.layers.tobytes() == b.layers.tobytes() and a.stride == b.stride
            and a.utterance_id == b.utterance_id and a.mode == b.mode)


def test_round_trip_stack(tmp_path):
    cache = FeatureCache(tmp_path)
    s = _stack()
    cache.put(_key(), s)
    assert _same_stack(cache.get(_key()), s)


def test_round_trip_track(tmp_path):
    cache = FeatureCache(tmp_path)
    voiced = np.array([True, False, True, True, False, False, True, True, True])
    t = ProsodyTrack("pitch", np.where(voiced, np.log(180.0), 0.0), voiced, 10.0, "u")
    cache.put(_key(kind="pitch"), t)
    got = cache.get(_key(kind="pitch"))
    assert got.values.tobytes() == t.values.tobytes()
    np.testing.assert_array_equal(got.voiced, t.voiced)
    assert (got.kind, got.hop, got.utterance_id) == ("pitch", 10.0, "u")


def test_miss(tmp_path):
    assert FeatureCache(tmp_path).get(_key("absent")) is None


def test_last_write_wins(tmp_path):
    cache = FeatureCache(tmp_path)
    cache.put(_key(), _stack(0))
    cache.put(_key(), _stack(1))
    assert _same_stack(cache.get(_key()), _stack(1))


def test_corruption_is_miss_with_warning(tmp_path, caplog):
    cache = FeatureCache(tmp_path)
    path = cache.put(_key(), _stack())
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with caplog.at_level("WARNING"):
        assert cache.get(_key()) is None
    assert any("corrupt" in r.message.lower() or "checksum" in r.message.lower() for r in caplog.records)


def test_truncated_entry_is_miss(tmp_path):
    cache = FeatureCache(tmp_path)
    path = cache.put(_key(), _stack())
    path.write_bytes(path.read_bytes()[:10])
    assert cache.get(_key()) is None


def test_key_fields_all_matter():
    base = CacheKey("a", "full", "u", "features", "v1")
    variants = [CacheKey("b", "full", "u", "features", "v1"), CacheKey("a", "causal", "u", "features", "v1"),
                CacheKey("a", "full", "v", "features", "v1"), CacheKey("a", "full", "u", "pitch", "v1"),
                CacheKey("a", "full", "u", "features", "v2")]
    assert len({base.digest()} | {v.digest() for v in variants}) == 6


def test_no_temp_files_left(tmp_path):
    cache = FeatureCache(tmp_path)
    for i in range(5):
        cache.put(_key(f"u{i}"), _stack(i))
    leftovers = [f for _, _, files in os.walk(tmp_path) for f in files if not f.endswith(".bin")]
    assert leftovers == []


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)),
       st.sampled_from([10.0, 20.0]), st.text(max_size=12))
@settings(max_examples=60)
def test_stack_payload_bit_exact(arr, stride, uid):
    s = LayerFeatureStack(arr, stride, uid)
    back = decode_payload(encode_payload(s))
    assert _same_stack(back, s)


@given(st.lists(st.tuples(st.booleans(), st.floats(-20, 20)), min_size=1, max_size=70),
       st.sampled_from(["pitch", "energy"]))
@settings(max_examples=60)
def test_track_payload_bit_exact(frames, kind):
    voiced = np.array([v for v, _ in frames])
    values = np.array([x for _, x in frames])
    t = ProsodyTrack(kind, values, voiced, 10.0, "id")
    back = decode_payload(encode_payload(t))
    assert back.values.tobytes() == t.values.tobytes()
    np.testing.assert_array_equal(back.voiced, t.voiced)


def test_unknown_payload_type():
    with pytest.raises(TypeError):
        encode_payload("not a payload")

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import sawtooth

from prosody_probe.containers import ProsodyTrack
from prosody_probe.dsp import LOG_FLOOR
from prosody_probe.prosody import align_track, extract_energy, extract_pitch, extract_track
from prosody_probe.synthetic import harmonic_tone

from conftest import sine


def _interior(track, margin=5):
    return track.values[margin:-margin], track.voiced[margin:-margin]


# pitch


def test_sawtooth_220():
    t = np.arange(3 * 16000) / 16000
    track = extract_pitch(0.4 * sawtooth(2 * np.pi * 220 * t))
    vals, voiced = _interior(track)
    assert voiced.mean() > 0.95
    assert np.max(np.abs(vals[voiced] - math.log(220))) < 0.05


@pytest.mark.parametrize("f0", [110.0, 220.0, 440.0])
def test_harmonic_tones(f0):
    vals, voiced = _interior(extract_pitch(harmonic_tone(f0, 1.0)))
    assert voiced.mean() > 0.95
    assert np.max(np.abs(vals[voiced] - math.log(f0))) < 0.05


@pytest.mark.parametrize("f0", [110.0, 220.0, 440.0])
def test_pure_sines(f0):
    vals, voiced = _interior(extract_pitch(sine(f0)))
    assert np.max(np.abs(vals[voiced] - math.log(f0))) < 0.05


def test_octave_relation():
    a = extract_pitch(harmonic_tone(150.0, 1.0))
    b = extract_pitch(harmonic_tone(300.0, 1.0))
    both = a.voiced & b.voiced
    diff = np.median(b.values[both] - a.values[both])
    assert abs(diff - math.log(2)) < 0.05


def test_silence_unvoiced():
    track = extract_pitch(np.zeros(16000))
    assert not track.voiced.any()
    assert np.all(track.values == 0.0)


def test_white_noise_mostly_unvoiced():
    noise = np.random.default_rng(0).standard_normal(3 * 16000) * 0.3
    assert (~extract_pitch(noise).voiced).mean() >= 0.95


def test_glide_followed():
    f0 = np.linspace(120.0, 240.0, 32000)
    track = extract_pitch(harmonic_tone(f0, 2.0))
    centers = (np.arange(len(track)) * 160 + 80).clip(max=31999)
    vals, voiced = track.values[5:-5], track.voiced[5:-5]
    want = np.log(f0[centers][5:-5])
    assert voiced.mean() > 0.9
    assert np.max(np.abs(vals[voiced] - want[voiced])) < 0.05


def test_pitch_too_short():
    with pytest.raises(ValueError):
        extract_pitch(np.zeros(100))


def test_pitch_deterministic(tone220):
    a, b = extract_pitch(tone220), extract_pitch(tone220)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.voiced, b.voiced)


def test_pitch_frame_count():
    assert len(extract_pitch(harmonic_tone(200.0, 1.0), hop=10.0)) == 100


# energy


@pytest.mark.parametrize("amp", [0.01, 0.3, 0.9])
def test_sine_energy(amp):
    vals, _ = _interior(extract_energy(sine(200.0, 1.0, amp)))
    np.testing.assert_allclose(vals, math.log(amp / math.sqrt(2)), atol=1e-3)


def test_energy_silence_floor():
    track = extract_energy(np.zeros(16000))
    np.testing.assert_allclose(track.values, math.log(LOG_FLOOR))
    assert track.voiced.all()


def test_energy_doubling_adds_ln2():
    wav = np.random.default_rng(1).uniform(-0.3, 0.3, 16000)
    d = extract_energy(2 * wav).values - extract_energy(wav).values
    np.testing.assert_allclose(d, math.log(2), atol=1e-12)


@given(st.floats(0.05, 20.0))
@settings(max_examples=25, deadline=None)
def test_energy_scale_equivariance(c):
    wav = np.random.default_rng(2).uniform(-0.1, 0.1, 4000)
    d = extract_energy(c * wav).values - extract_energy(wav).values
    np.testing.assert_allclose(d, math.log(c), atol=1e-9)


def test_energy_too_short():
    with pytest.raises(ValueError):
        extract_energy(np.zeros(200))


def test_extract_track_dispatch():
    assert extract_track(sine(200), "energy").kind == "energy"
    with pytest.raises(ValueError):
        extract_track(sine(200), "loudness")


# alignment


def _track(values, voiced, hop=10.0):
    return ProsodyTrack("pitch", np.asarray(values, float), np.asarray(voiced, bool), hop)


def test_pairs_average():
    out = align_track(_track([1.0, 3.0, 5.0, 7.0], [1, 1, 1, 1]), 20, 2)
    np.testing.assert_allclose(out.values, [2.0, 6.0])
    assert out.hop == 20


def test_tie_counts_as_voiced():
    out = align_track(_track([4.0, 0.0], [1, 0]), 20, 1)
    assert out.voiced[0] and out.values[0] == 4.0


def test_clip_to_target():
    out = align_track(_track(np.ones(101), np.ones(101)), 20, 50)
    assert len(out) == 50


def test_pad_unvoiced():
    out = align_track(_track(np.ones(10), np.ones(10)), 20, 8)
    assert out.voiced.tolist() == [True] * 5 + [False] * 3


def test_non_integer_ratio():
    with pytest.raises(ValueError):
        align_track(_track(np.ones(10), np.ones(10)), 15, 5)


def test_identity_ratio():
    t = _track([1.0, 2.0, 0.0], [1, 1, 0])
    out = align_track(t, 10, 3)
    np.testing.assert_array_equal(out.voiced, t.voiced)
    np.testing.assert_array_equal(out.values, t.values)


@given(st.lists(st.tuples(st.booleans(), st.floats(3.5, 6.5)), min_size=1, max_size=60),
       st.sampled_from([1, 2, 3, 4]), st.integers(0, 40))
@settings(max_examples=100)
def test_alignment_majority_rule(frames, r, T_target):
    voiced = np.array([v for v, _ in frames])
    values = np.where(voiced, [x for _, x in frames], 0.0)
    out = align_track(_track(values, voiced), 10.0 * r, T_target)
    assert len(out) == T_target
    for j in range(T_target):
        group = voiced[j * r : (j + 1) * r]
        if len(group) < r:
            assert not out.voiced[j]
            continue
        assert out.voiced[j] == (group.sum() >= math.ceil(r / 2))
        if out.voiced[j]:
            assert math.isclose(out.values[j], values[j * r : (j + 1) * r][group].mean(), rel_tol=1e-12)
    # nothing voiced comes from all-unvoiced inputs
    if not voiced.any():
        assert not out.voiced.any()

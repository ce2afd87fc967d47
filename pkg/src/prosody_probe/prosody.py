"""Frame-level prosody targets: log-f0 with voicing, log-energy, and stride alignment."""

from __future__ import annotations

import math

import numpy as np

from .containers import ProsodyTrack
from .dsp import LOG_FLOOR, frame_signal, ms_to_samples
from .pitch import PitchConfig, track_pitch

ENERGY_WINDOW_MS = 25.0
UNVOICED_SENTINEL = 0.0


def extract_pitch(wav: np.ndarray, hop: float = 10.0, utterance_id: str = "",
                  cfg: PitchConfig = PitchConfig()) -> ProsodyTrack:
    f0, voiced = track_pitch(wav, hop, cfg)
    values = np.where(voiced, np.log(np.where(voiced, f0, 1.0)), UNVOICED_SENTINEL)
    return ProsodyTrack("pitch", values, voiced, hop, utterance_id)


def frame_rms(wav: np.ndarray, hop: float = 10.0, window_ms: float = ENERGY_WINDOW_MS) -> np.ndarray:
    win = ms_to_samples(window_ms)
    frames = frame_signal(np.asarray(wav, dtype=np.float64), win, ms_to_samples(hop), "center")
    return np.sqrt(np.mean(frames**2, axis=1))


def extract_energy(wav: np.ndarray, hop: float = 10.0, utterance_id: str = "") -> ProsodyTrack:
    """Natural log of frame RMS over a 25 ms window, clamped at ``LOG_FLOOR``."""
    wav = np.asarray(wav, dtype=np.float64)
    if len(wav) < ms_to_samples(ENERGY_WINDOW_MS):
        raise ValueError("audio shorter than one energy analysis window")
    values = np.log(np.maximum(frame_rms(wav, hop), LOG_FLOOR))
    return ProsodyTrack("energy", values, np.ones(len(values), dtype=bool), hop, utterance_id)


def extract_track(wav: np.ndarray, kind: str, hop: float = 10.0, utterance_id: str = "") -> ProsodyTrack:
    if kind == "pitch":
        return extract_pitch(wav, hop, utterance_id)
    if kind == "energy":
        return extract_energy(wav, hop, utterance_id)
    raise ValueError(f"unknown prosody feature {kind!r}")


def align_track(track: ProsodyTrack, target_stride: float, T_target: int) -> ProsodyTrack:
    """Pool groups of ``r = target_stride / hop`` frames onto the upstream frame grid.

    An output frame is voiced when at least ceil(r/2) of its constituents are
    (ties count as voiced); its value is the mean over voiced constituents.
    Output is clipped or padded (unvoiced) to ``T_target`` frames.
    """
    ratio = target_stride / track.hop
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > 1e-9:
        raise ValueError(f"stride {target_stride} ms is not an integer multiple of hop {track.hop} ms")
    n_full = len(track) // r
    vals = track.values[: n_full * r].reshape(n_full, r)
    mask = track.voiced[: n_full * r].reshape(n_full, r)
    counts = mask.sum(axis=1)
    voiced = counts >= math.ceil(r / 2)
    sums = np.where(mask, vals, 0.0).sum(axis=1)
    values = np.where(voiced, sums / np.maximum(counts, 1), UNVOICED_SENTINEL)

    out_v = np.full(T_target, UNVOICED_SENTINEL)
    out_m = np.zeros(T_target, dtype=bool)
    n = min(T_target, n_full)
    out_v[:n], out_m[:n] = values[:n], voiced[:n]
    return ProsodyTrack(track.kind, out_v, out_m, float(target_stride), track.utterance_id)

"""80-bin log mel filterbank with deltas and delta-deltas (240 dims, 10 ms hop)."""

from __future__ import annotations

import hashlib

import numpy as np

from ..containers import LayerFeatureStack
from ..dsp import LOG_FLOOR, SAMPLE_RATE, deltas, frame_signal, mel_filterbank

N_MELS = 80
WIN = 400  # 25 ms
HOP = 160  # 10 ms
N_FFT = 512
DELTA_WIDTH = 2

_WINDOW = np.hamming(WIN)
_MEL = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE)


def log_mel(wav: np.ndarray, align: str = "center") -> np.ndarray:
    """(T, 80) log mel energies, floored at ``LOG_FLOOR`` before the log."""
    frames = frame_signal(np.asarray(wav, dtype=np.float64), WIN, HOP, align) * _WINDOW
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=-1)) ** 2
    return np.log(np.maximum(power @ _MEL.T, LOG_FLOOR))


def fbank_features(wav: np.ndarray, mode: str = "full", utterance_id: str = "") -> LayerFeatureStack:
    """Single-layer (1, T, 240) stack.

    In ``causal`` mode each window ends at its frame's right edge and the
    delta regression is evaluated ``DELTA_WIDTH`` frames late, so frame ``t``
    depends only on samples before ``(t + 1) * HOP``.
    """
    wav = np.asarray(wav, dtype=np.float64)
    if wav.ndim != 1:
        raise ValueError("expected mono waveform")
    if len(wav) < WIN:
        raise ValueError(f"input of {len(wav)} samples is shorter than one {WIN}-sample window")
    if mode == "full":
        static = log_mel(wav, "center")
        d1 = deltas(static, DELTA_WIDTH)
        d2 = deltas(d1, DELTA_WIDTH)
    elif mode == "causal":
        static = log_mel(wav, "causal")
        d1 = _lagged(deltas(static, DELTA_WIDTH), DELTA_WIDTH)
        d2 = _lagged(deltas(d1, DELTA_WIDTH), DELTA_WIDTH)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    feats = np.concatenate([static, d1, d2], axis=-1)
    return LayerFeatureStack(feats[None], stride=10.0, utterance_id=utterance_id, mode=mode)


def _lagged(x: np.ndarray, lag: int) -> np.ndarray:
    # row t <- row t-lag; leading rows repeat row 0 of the lagged sequence
    if lag == 0 or len(x) == 0:
        return x
    out = np.empty_like(x)
    out[lag:] = x[:-lag] if lag < len(x) else x[:0]
    out[: min(lag, len(x))] = x[0]
    return out


def fbank_checksum() -> str:
    """Digest of the fixed extractor constants (the FBANK 'parameters')."""
    h = hashlib.sha256()
    h.update(_MEL.tobytes())
    h.update(_WINDOW.tobytes())
    h.update(np.array([N_MELS, WIN, HOP, N_FFT, DELTA_WIDTH]).tobytes())
    return h.hexdigest()

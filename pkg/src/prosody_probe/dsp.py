"""Framing and filterbank helpers shared by the FBANK upstream and the prosody targets.

Frame convention: a signal of ``n`` samples at hop ``h`` has ``n // h`` frames;
frame ``t`` owns samples ``[t*h, (t+1)*h)``. Centered analysis windows are
centered on the middle of the owned span; causal windows end at its right edge.
"""

from __future__ import annotations

import numpy as np

SAMPLE_RATE = 16_000
LOG_FLOOR = 1e-10


def ms_to_samples(ms: float, sr: int = SAMPLE_RATE) -> int:
    n = ms * sr / 1000.0
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{ms} ms is not a whole number of samples at {sr} Hz")
    return int(round(n))


def num_frames(n_samples: int, hop: int) -> int:
    return n_samples // hop


def frame_signal(wav: np.ndarray, win: int, hop: int, align: str = "center") -> np.ndarray:
    """Slice ``wav`` into (T, win) analysis windows, zero-padding past either edge."""
    T = num_frames(len(wav), hop)
    if align == "center":
        starts = np.arange(T) * hop + hop // 2 - win // 2
    elif align == "causal":
        starts = (np.arange(T) + 1) * hop - win
    else:
        raise ValueError(f"unknown alignment {align!r}")
    pad_left = max(0, -int(starts.min())) if T else 0
    pad_right = max(0, int(starts.max()) + win - len(wav)) if T else 0
    padded = np.pad(wav, (pad_left, pad_right))
    idx = (starts + pad_left)[:, None] + np.arange(win)[None, :]
    return padded[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sr: int = SAMPLE_RATE, fmin: float = 20.0, fmax: float | None = None):
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sr / 2 if fmax is None else fmax
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    lower, center, upper = hz_pts[:-2, None], hz_pts[1:-1, None], hz_pts[2:, None]
    up = (freqs[None, :] - lower) / (center - lower)
    down = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(up, down))


def deltas(feats: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-``width`` frames along axis 0, edges replicated."""
    T = feats.shape[0]
    padded = np.pad(feats, ((width, width), (0, 0)), mode="edge")
    denom = 2 * sum(n * n for n in range(1, width + 1))
    out = np.zeros_like(feats, dtype=np.float64)
    for n in range(1, width + 1):
        out += n * (padded[width + n : width + n + T] - padded[width - n : width - n + T])
    return out / denom

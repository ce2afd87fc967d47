"""Spectro-temporal f0 tracker with dynamic-programming smoothing.

Per frame, candidates come from two sources: peaks of the normalized
cross-correlation function (NCCF) of the band-passed signal, and the peak of
the spectral harmonics correlation (SHC) of the squared ("nonlinear") signal,
which restores a missing fundamental. Every candidate is scored by its NCCF
value. A Viterbi pass over {candidates, unvoiced} picks the track, penalizing
log-frequency jumps and voicing switches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .dsp import SAMPLE_RATE


@dataclass(frozen=True)
class PitchConfig:
    f0_min: float = 60.0
    f0_max: float = 500.0
    window_ms: float = 35.0
    n_candidates: int = 4
    n_harmonics: int = 3
    shc_window_hz: float = 40.0
    voicing_threshold: float = 0.5
    lag_penalty: float = 0.1
    jump_cost: float = 1.0
    voicing_switch_cost: float = 0.3
    min_rel_energy_db: float = -40.0
    min_abs_rms: float = 1e-5


def _bandpass(wav, lo, hi, sr):
    sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    if len(wav) <= 3 * (2 * sos.shape[0] + 1):
        return wav - wav.mean()
    return sosfiltfilt(sos, wav)


def _segments(x: np.ndarray, T: int, hop: int, length: int, offset: int) -> np.ndarray:
    starts = np.arange(T) * hop + hop // 2 - offset
    pad_left = max(0, -int(starts.min()))
    pad_right = max(0, int(starts.max()) + length - len(x))
    padded = np.pad(x, (pad_left, pad_right))
    return padded[(starts + pad_left)[:, None] + np.arange(length)[None, :]]


def nccf(frames: np.ndarray, n: int, lags: np.ndarray) -> np.ndarray:
    """NCCF of (T, n + max_lag) segments at the given integer lags -> (T, len(lags))."""
    ref = frames[:, :n]
    e0 = np.sum(ref**2, axis=1)
    csum = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames**2, axis=1)], axis=1)
    out = np.zeros((len(frames), len(lags)))
    for j, k in enumerate(lags):
        num = np.sum(ref * frames[:, k : k + n], axis=1)
        ek = csum[:, k + n] - csum[:, k]
        denom = np.sqrt(e0 * ek)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, j] = np.where(denom > 1e-12, num / denom, 0.0)
    return out


def _parabolic(y_left, y_mid, y_right):
    denom = y_left - 2 * y_mid + y_right
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(np.abs(denom) > 1e-12, 0.5 * (y_left - y_right) / denom, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    peak = y_mid - 0.25 * (y_left - y_right) * shift
    return shift, peak


def _shc_track(nonlinear: np.ndarray, T: int, hop: int, cfg: PitchConfig, sr: int) -> np.ndarray:
    """Spectral f0 estimate per frame (Hz) from the harmonics product of the magnitude spectrum."""
    win = int(round(cfg.window_ms * sr / 1000))
    n_fft = 8192
    frames = _segments(nonlinear, T, hop, win, win // 2) * np.hanning(win)
    frames = frames - frames.mean(axis=1, keepdims=True)
    spec = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    spec /= spec.max(axis=1, keepdims=True) + 1e-12
    df = sr / n_fft
    grid = np.arange(cfg.f0_min, cfg.f0_max + df, df)
    half = int(round(cfg.shc_window_hz / 2 / df))
    # smear each bin over +-half bins so the harmonic product tolerates mistuning
    kernel = np.ones(2 * half + 1)
    smeared = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, spec)
    shc = np.ones((T, len(grid)))
    for r in range(1, cfg.n_harmonics + 2):
        idx = np.clip(np.round(r * grid / df).astype(int), 0, spec.shape[1] - 1)
        shc *= smeared[:, idx]
    return grid[np.argmax(shc, axis=1)]


def track_pitch(wav: np.ndarray, hop_ms: float = 10.0, cfg: PitchConfig = PitchConfig(),
                sr: int = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Return (f0_hz, voiced) per frame; f0 is 0 on unvoiced frames."""
    wav = np.asarray(wav, dtype=np.float64)
    hop = int(round(hop_ms * sr / 1000))
    n = int(round(cfg.window_ms * sr / 1000))
    lag_min = int(np.floor(sr / cfg.f0_max))
    lag_max = int(np.ceil(sr / cfg.f0_min))
    if len(wav) < n:
        raise ValueError(f"input of {len(wav)} samples is shorter than the {n}-sample pitch window")
    T = len(wav) // hop

    band = _bandpass(wav, 50.0, min(1500.0, sr / 2 - 1), sr)
    nonlinear = _bandpass(band**2, 50.0, min(1500.0, sr / 2 - 1), sr)

    lags = np.arange(lag_min - 1, lag_max + 2)
    segs = _segments(band, T, hop, n + lags[-1] + 1, n // 2)
    corr = nccf(segs, n, lags)

    rms = np.sqrt(np.mean(_segments(wav, T, hop, n, n // 2) ** 2, axis=1))
    floor = max(cfg.min_abs_rms, rms.max() * 10 ** (cfg.min_rel_energy_db / 20)) if T else 0.0
    loud = rms > floor

    # NCCF peak candidates with parabolic refinement
    inner = corr[:, 1:-1]
    is_peak = (inner >= corr[:, :-2]) & (inner > corr[:, 2:]) & (inner > 0)
    shift, height = _parabolic(corr[:, :-2], inner, corr[:, 2:])
    frac_lag = lags[1:-1][None, :] + shift

    # rank by lag-penalized height so that, among equal peaks, the shortest lag survives
    ranked = height - cfg.lag_penalty * (frac_lag - lag_min) / (lag_max - lag_min)
    cand_f0 = np.zeros((T, cfg.n_candidates + 1))
    cand_merit = np.full((T, cfg.n_candidates + 1), -np.inf)
    for t in range(T):
        idx = np.flatnonzero(is_peak[t])
        if idx.size:
            top = idx[np.argsort(ranked[t, idx], kind="stable")[::-1][: cfg.n_candidates]]
            cand_f0[t, : len(top)] = sr / frac_lag[t, top]
            cand_merit[t, : len(top)] = height[t, top]

    # spectral candidate, scored by the NCCF at its (interpolated) lag
    f_spec = _shc_track(nonlinear, T, hop, cfg, sr)
    spec_lag = sr / f_spec
    cand_f0[:, -1] = f_spec
    cand_merit[:, -1] = [np.interp(spec_lag[t], lags, corr[t]) for t in range(T)]

    valid = (cand_f0 >= cfg.f0_min * 0.97) & (cand_f0 <= cfg.f0_max * 1.03) & np.isfinite(cand_merit)
    lag_frac = (sr / np.maximum(cand_f0, 1e-9) - lag_min) / (lag_max - lag_min)
    cost_v = np.where(valid, 1.0 - cand_merit + cfg.lag_penalty * lag_frac, np.inf)
    cost_v[~loud] = np.inf
    cost_uv = np.full(T, 1.0 - cfg.voicing_threshold)

    f0, voiced = _viterbi(cand_f0, cost_v, cost_uv, cfg)
    return f0, voiced


def _viterbi(cand_f0, cost_v, cost_uv, cfg: PitchConfig):
    T, K = cand_f0.shape
    if T == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    logf = np.log(np.maximum(cand_f0, 1e-9))
    # state K is unvoiced
    acc = np.concatenate([cost_v[0], [cost_uv[0]]])
    back = np.zeros((T, K + 1), dtype=int)
    for t in range(1, T):
        trans = np.empty((K + 1, K + 1))
        trans[:K, :K] = cfg.jump_cost * np.abs(logf[t - 1][:, None] - logf[t][None, :])
        trans[:K, K] = cfg.voicing_switch_cost
        trans[K, :K] = cfg.voicing_switch_cost
        trans[K, K] = 0.0
        with np.errstate(invalid="ignore"):
            total = acc[:, None] + trans
        total = np.where(np.isnan(total), np.inf, total)
        back[t] = np.argmin(total, axis=0)
        acc = total[back[t], np.arange(K + 1)] + np.concatenate([cost_v[t], [cost_uv[t]]])
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmin(acc))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    voiced = path < K
    f0 = np.where(voiced, cand_f0[np.arange(T), np.minimum(path, K - 1)], 0.0)
    return f0, voiced

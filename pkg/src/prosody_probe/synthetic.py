"""Synthetic speech-like corpora for tests and experiment scripts.

Utterances alternate voiced stretches (harmonic complexes with a slowly
varying f0 and amplitude) and unvoiced stretches (low-level noise), so
both pitch and energy targets are non-trivial.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import SAMPLE_RATE, DatasetManifest, UtteranceRecord, write_manifest, write_wav
from .prosody import align_track, extract_pitch

# centre and scale for planting log-f0 into a mock layer at roughly unit scale,
# so the planted layer's norm does not stand out from the random layers
PLANT_CENTER = 5.0
PLANT_SCALE = 0.35


def harmonic_tone(f0: float | np.ndarray, duration: float, amplitude=0.3, n_harmonics: int = 10,
                  sr: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(duration * sr))
    f = np.broadcast_to(np.asarray(f0, dtype=np.float64), (n,))
    phase = 2 * np.pi * np.cumsum(f) / sr
    sig = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        # keep harmonics below Nyquist
        sig += np.where(k * f < sr / 2, np.sin(k * phase) / k, 0.0)
    sig /= np.max(np.abs(sig)) + 1e-12
    return sig * amplitude


def speechlike_utterance(rng: np.random.Generator, duration: float = 1.0, f0_range=(90.0, 300.0),
                         sr: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    base = np.exp(rng.uniform(np.log(f0_range[0]), np.log(f0_range[1])))
    depth = rng.uniform(0.0, 0.25)
    rate = rng.uniform(0.5, 2.0)
    f0 = np.clip(base * np.exp(depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))), *f0_range)
    amp_env = rng.uniform(0.05, 0.5) * np.exp(0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 3) * t))
    voiced = harmonic_tone(f0, duration, 1.0, sr=sr) * amp_env
    gate = np.ones(n)
    for _ in range(rng.integers(1, 3)):
        start = rng.integers(0, max(1, n - sr // 5))
        gate[start : start + rng.integers(sr // 20, sr // 5)] = 0.0
    noise = rng.standard_normal(n) * 0.01
    return np.clip(voiced * gate + noise * (1 - gate), -1, 1)


def write_corpus(root: str | Path, n: int, task: str = "ProR", seed: int = 0, duration: float = 1.0,
                 splits=(0.8, 0.1, 0.1), language: str = "en", labels=None,
                 label_scheme: str = "") -> tuple[DatasetManifest, Path]:
    """Write ``n`` synthetic WAVs plus a manifest; returns (manifest, manifest_path)."""
    root = Path(root)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_train = int(round(splits[0] * n))
    n_dev = int(round(splits[1] * n))
    records = []
    for i in range(n):
        wav = speechlike_utterance(rng, duration)
        rel = f"wav/utt{i:05d}.wav"
        write_wav(root / rel, wav)
        split = "train" if i < n_train else "dev" if i < n_train + n_dev else "test"
        label = None if labels is None else labels[i]
        records.append(UtteranceRecord(f"utt{i:05d}", rel, SAMPLE_RATE, len(wav) / SAMPLE_RATE, label=label,
                                       split=split, speaker=f"spk{i % 7}", language=language))
    manifest = DatasetManifest(f"synthetic-{task}", task, records, label_scheme, root)
    path = write_manifest(manifest, root / "manifest.jsonl")
    return manifest, path


def planted_pitch_signal(wav: np.ndarray, stride: int = 20, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Standardized log-f0 at ``stride`` ms (0 on unvoiced frames), for MockUpstream(planted_fn=...)."""
    T = len(wav) // (stride * sr // 1000)
    track = align_track(extract_pitch(wav, 10.0), stride, T)
    return np.where(track.voiced, (track.values - PLANT_CENTER) / PLANT_SCALE, 0.0)

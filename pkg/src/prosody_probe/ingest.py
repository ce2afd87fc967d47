"""Dataset manifests, label binning, fold construction and audio loading.

Manifest files are line-delimited JSON. The first line is a header::

    {"format": "prosody-probe-manifest", "version": 1, "name": "...",
     "task": "SA", "label_scheme": "sentiment-continuous"}

and every following line is one utterance record. Relative audio paths are
resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16_000
MANIFEST_FORMAT = "prosody-probe-manifest"
MANIFEST_VERSION = 1
TASKS = ("SA", "SarD", "PP", "ProR", "FVP", "XL-ProR")
SPLITS = ("train", "dev", "test")


class ManifestError(ValueError):
    pass


class AudioError(RuntimeError):
    pass


@dataclass
class UtteranceRecord:
    id: str
    audio_path: str
    sample_rate: int
    duration: float
    label: float | int | None = None
    split: str | int | None = None
    speaker: str | None = None
    language: str = "en"

    def validate(self) -> None:
        if not self.id:
            raise ManifestError("record with empty id")
        if not (self.duration > 0):
            raise ManifestError(f"record {self.id!r}: duration must be > 0, got {self.duration}")
        if self.sample_rate <= 0:
            raise ManifestError(f"record {self.id!r}: sample_rate must be > 0")
        if isinstance(self.split, str) and self.split not in SPLITS:
            raise ManifestError(f"record {self.id!r}: unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    name: str
    task: str
    records: list[UtteranceRecord] = field(default_factory=list)
    label_scheme: str = ""
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, record: UtteranceRecord) -> Path:
        path = Path(record.audio_path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    @property
    def languages(self) -> set[str]:
        return {r.language for r in self.records}

    def content_hash(self) -> str:
        """Stable digest of the record list, used in result fingerprints."""
        import hashlib

        h = hashlib.sha256()
        for rec in self.records:
            h.update(json.dumps(asdict(rec), sort_keys=True).encode())
        return h.hexdigest()[:16]


@dataclass
class FoldAssignment:
    k: int
    mapping: dict[str, int]

    def fold(self, index: int) -> list[str]:
        return [rid for rid, f in self.mapping.items() if f == index]

    def sizes(self) -> list[int]:
        counts = Counter(self.mapping.values())
        return [counts.get(i, 0) for i in range(self.k)]


def load_manifest(path: str | Path, check_audio: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest (missing header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise ManifestError(f"{path}: malformed header line: {err}") from err
    if header.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a {MANIFEST_FORMAT} file")
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {header.get('version')!r}")
    task = header.get("task")
    if task not in TASKS:
        raise ManifestError(f"{path}: unknown task {task!r}")

    known = {f for f in UtteranceRecord.__dataclass_fields__}
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as err:
            raise ManifestError(f"{path}:{lineno}: malformed record: {err}") from err
        extra = set(raw) - known
        if extra:
            raise ManifestError(f"{path}:{lineno}: unknown fields {sorted(extra)}")
        try:
            rec = UtteranceRecord(**raw)
        except TypeError as err:
            raise ManifestError(f"{path}:{lineno}: {err}") from err
        rec.validate()
        records.append(rec)

    dupes = sorted(rid for rid, n in Counter(r.id for r in records).items() if n > 1)
    if dupes:
        raise ManifestError(f"{path}: duplicate record ids: {dupes}")

    manifest = DatasetManifest(
        name=header.get("name", path.stem),
        task=task,
        records=records,
        label_scheme=header.get("label_scheme", ""),
        root=path.parent,
    )
    if check_audio:
        for rec in records:
            if not manifest.resolve(rec).exists():
                raise ManifestError(f"record {rec.id!r}: audio file not found: {rec.audio_path}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "name": manifest.name,
        "task": manifest.task,
        "label_scheme": manifest.label_scheme,
    }
    lines = [json.dumps(header)]
    lines += [json.dumps(asdict(r), ensure_ascii=False) for r in manifest.records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def bin_sentiment_label(score: float, scheme: str = "binary") -> int | None:
    """Map a continuous sentiment score in [-3, 3] to a class index.

    ``binary``: [-3, 0) -> 0, (0, 3] -> 1, and exactly 0 is excluded (``None``).
    ``seven``: round half away from zero, then shift {-3..3} to {0..6}.
    """
    if not (-3.0 <= score <= 3.0):
        raise ValueError(f"sentiment score {score} outside [-3, 3]")
    if scheme == "binary":
        if score == 0:
            return None
        return 0 if score < 0 else 1
    if scheme == "seven":
        rounded = math.copysign(math.floor(abs(score) + 0.5), score)
        return int(rounded) + 3
    raise ValueError(f"unknown scheme {scheme!r}")


def make_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Speaker-dependent k-fold split: utterances are shuffled and dealt round-robin."""
    ids = [r.id for r in manifest.records]
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds record count {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    mapping = {ids[j]: pos % k for pos, j in enumerate(order)}
    return FoldAssignment(k=k, mapping=mapping)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    return np.clip(data.astype(np.float64), -1.0, 1.0)


def read_waveform(path: str | Path, target_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Decode a WAV file into mono float64 samples in [-1, 1] at ``target_rate``."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as err:
        raise AudioError(f"cannot decode {path}: {err}") from err
    if data.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    wav = _to_float(data)
    if wav.ndim == 2:
        wav = wav.mean(axis=1)
    if rate != target_rate:
        ratio = Fraction(target_rate, rate)
        wav = resample_poly(wav, ratio.numerator, ratio.denominator)
        wav = np.clip(wav, -1.0, 1.0)
    return wav


def load_audio(record: UtteranceRecord, manifest: DatasetManifest | None = None) -> np.ndarray:
    path = manifest.resolve(record) if manifest is not None else Path(record.audio_path)
    wav = read_waveform(path)
    expected = record.duration * SAMPLE_RATE
    if abs(len(wav) - expected) > 1:
        logger.warning(
            "record %s: decoded %d samples, manifest duration implies %.1f", record.id, len(wav), expected
        )
    return wav


def write_wav(path: str | Path, wav: np.ndarray, rate: int = SAMPLE_RATE) -> Path:
    """Write float samples as 16-bit PCM."""
    pcm = np.round(np.clip(wav, -1.0, 1.0) * 32767).astype(np.int16)
    wavfile.write(str(path), rate, pcm)
    return Path(path)

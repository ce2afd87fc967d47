from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheKey, FeatureCache
from .containers import LayerFeatureStack, ProsodyTrack
from .ingest import DatasetManifest, UtteranceRecord, load_audio
from .prosody import align_track, extract_track
from .upstream import Upstream

logger = logging.getLogger(__name__)

TRACK_HOP_MS = 10.0
TRACK_EXTRACTOR_VERSION = "pitch-v1+energy-v1"


@dataclass
class ExtractSummary:
    new: int = 0
    reused: int = 0
    failed: int = 0
    errors: dict[str, str] = field(default_factory=dict)


class FeatureProvider:
    """Cache-aware access to layer stacks and prosody tracks for manifest records."""

    def __init__(self, upstream: Upstream, manifest: DatasetManifest, cache: FeatureCache | None = None):
        self.upstream = upstream
        self.manifest = manifest
        self.cache = cache
        self._audio: dict[str, np.ndarray] = {}

    def audio(self, record: UtteranceRecord) -> np.ndarray:
        if record.id not in self._audio:
            self._audio[record.id] = load_audio(record, self.manifest)
        return self._audio[record.id]

    def _stack_key(self, record, mode):
        return CacheKey(self.upstream.spec.name, mode, record.id, "layers", self.upstream.version)

    def _track_key(self, record, kind):
        return CacheKey("prosody", "full", record.id, kind, TRACK_EXTRACTOR_VERSION)

    def stack(self, record: UtteranceRecord, mode: str = "full") -> LayerFeatureStack:
        key = self._stack_key(record, mode)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        stack = self.upstream.extract(self.audio(record), mode, record.id)
        if self.cache is not None:
            self.cache.put(key, stack)
        return stack

    def track(self, record: UtteranceRecord, kind: str) -> ProsodyTrack:
        key = self._track_key(record, kind)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        track = extract_track(self.audio(record), kind, TRACK_HOP_MS, record.id)
        if self.cache is not None:
            self.cache.put(key, track)
        return track

    def aligned_track(self, record: UtteranceRecord, kind: str, num_frames: int) -> ProsodyTrack:
        return align_track(self.track(record, kind), self.upstream.spec.stride, num_frames)

    def populate(self, modes=("full",), tracks=()) -> ExtractSummary:
        """Fill the cache for every record; per-record failures are counted, not raised."""
        if self.cache is None:
            raise ValueError("populate() needs a cache")
        summary = ExtractSummary()
        for rec in self.manifest.records:
            keys = [self._stack_key(rec, m) for m in modes] + [self._track_key(rec, k) for k in tracks]
            if all(k in self.cache for k in keys):
                summary.reused += 1
                continue
            try:
                for m in modes:
                    self.stack(rec, m)
                for k in tracks:
                    self.track(rec, k)
            except Exception as err:  # noqa: BLE001 - reported per record
                logger.error("record %s failed: %s", rec.id, err)
                summary.failed += 1
                summary.errors[rec.id] = str(err)
            else:
                summary.new += 1
            finally:
                self._audio.pop(rec.id, None)
        return summary

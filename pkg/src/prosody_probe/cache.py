"""Content-addressed on-disk cache for feature stacks and prosody tracks.

Each entry lives at ``<root>/<hh>/<digest>.bin`` where ``digest`` is the
SHA-256 of the cache key. File layout::

    magic  b"PPCE"            4 bytes
    sha256(payload)          32 bytes
    payload

Payload (all little-endian)::

    u16 version, u8 kind (1 = stack, 2 = track)
    stack: u32 L, u32 T, u32 D, f64 stride, u8 mode, u16 id_len, id utf-8,
           L*T*D f32
    track: u8 track_kind, u32 T, f64 hop, u16 id_len, id utf-8,
           T f64 values, ceil(T/8) bytes packed voicing bitmask
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np

from .containers import LayerFeatureStack, ProsodyTrack

logger = logging.getLogger(__name__)

MAGIC = b"PPCE"
PAYLOAD_VERSION = 1
_KIND_STACK, _KIND_TRACK = 1, 2
_MODES = ("full", "causal")
_TRACK_KINDS = ("pitch", "energy")


class CacheCorruption(Exception):
    pass


@dataclass(frozen=True)
class CacheKey:
    upstream: str
    mode: str
    utterance_id: str
    kind: str
    extractor_version: str

    def digest(self) -> str:
        text = "\x1f".join(astuple(self))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _encode_id(uid: str) -> bytes:
    raw = uid.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_payload(obj: LayerFeatureStack | ProsodyTrack) -> bytes:
    if isinstance(obj, LayerFeatureStack):
        L, T, D = obj.layers.shape
        head = struct.pack("<HB", PAYLOAD_VERSION, _KIND_STACK)
        head += struct.pack("<IIIdB", L, T, D, obj.stride, _MODES.index(obj.mode))
        return head + _encode_id(obj.utterance_id) + obj.layers.astype("<f4").tobytes()
    if isinstance(obj, ProsodyTrack):
        T = len(obj.values)
        head = struct.pack("<HB", PAYLOAD_VERSION, _KIND_TRACK)
        head += struct.pack("<BId", _TRACK_KINDS.index(obj.kind), T, obj.hop)
        bits = np.packbits(obj.voiced, bitorder="little").tobytes()
        return head + _encode_id(obj.utterance_id) + obj.values.astype("<f8").tobytes() + bits
    raise TypeError(f"cannot cache object of type {type(obj).__name__}")


def decode_payload(buf: bytes) -> LayerFeatureStack | ProsodyTrack:
    version, kind = struct.unpack_from("<HB", buf, 0)
    if version != PAYLOAD_VERSION:
        raise CacheCorruption(f"unsupported payload version {version}")
    off = 3
    if kind == _KIND_STACK:
        L, T, D, stride, mode = struct.unpack_from("<IIIdB", buf, off)
        off += struct.calcsize("<IIIdB")
        (n,) = struct.unpack_from("<H", buf, off)
        uid = buf[off + 2 : off + 2 + n].decode("utf-8")
        off += 2 + n
        layers = np.frombuffer(buf, dtype="<f4", count=L * T * D, offset=off).reshape(L, T, D)
        return LayerFeatureStack(layers.astype(np.float32), float(stride), uid, _MODES[mode])
    if kind == _KIND_TRACK:
        tkind, T, hop = struct.unpack_from("<BId", buf, off)
        off += struct.calcsize("<BId")
        (n,) = struct.unpack_from("<H", buf, off)
        uid = buf[off + 2 : off + 2 + n].decode("utf-8")
        off += 2 + n
        values = np.frombuffer(buf, dtype="<f8", count=T, offset=off).astype(np.float64)
        off += 8 * T
        bits = np.frombuffer(buf, dtype=np.uint8, offset=off)
        voiced = np.unpackbits(bits, count=T, bitorder="little").astype(bool)
        return ProsodyTrack(_TRACK_KINDS[tkind], values, voiced, float(hop), uid)
    raise CacheCorruption(f"unknown payload kind {kind}")


class FeatureCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: CacheKey) -> Path:
        digest = key.digest()
        return self.root / digest[:2] / f"{digest}.bin"

    def __contains__(self, key: CacheKey) -> bool:
        return self.path_for(key).exists()

    def put(self, key: CacheKey, payload: LayerFeatureStack | ProsodyTrack) -> Path:
        body = encode_payload(payload)
        blob = MAGIC + hashlib.sha256(body).digest() + body
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def get(self, key: CacheKey) -> LayerFeatureStack | ProsodyTrack | None:
        """Return the cached payload, or ``None`` on a miss or a corrupted entry."""
        path = self.path_for(key)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            if blob[:4] != MAGIC:
                raise CacheCorruption("bad magic")
            body = blob[36:]
            if hashlib.sha256(body).digest() != blob[4:36]:
                raise CacheCorruption("checksum mismatch")
            return decode_payload(body)
        except (CacheCorruption, struct.error, ValueError, IndexError) as err:
            logger.warning("corrupted cache entry %s (%s); treating as miss", path, err)
            return None

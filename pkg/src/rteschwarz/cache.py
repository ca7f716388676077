"""Binary persistence of compressed solution maps.

Format (all integers and floats little-endian):

    magic   5 bytes  b"LRSM1"
    version u32      currently 1
    fp_len  u32      fingerprint byte length
    fp      utf-8    discretization fingerprint
    count   u32      number of maps
    per map:
        owner u32, rank u32, n_boundary u32, n_nodes u32, n_v u32
        sigma   rank f64
        weights n_boundary f64
        nu      n_boundary * rank f64 (C order)
        mu      n_nodes * n_v * rank f64 (C order)

Files are written to a temporary sibling and renamed into place, and a
load of a save reproduces the arrays bit for bit.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .rsvd import LowRankMap

MAGIC = b"LRSM1"
VERSION = 1


class CacheError(Exception):
    """Base class for map-cache failures."""


class CacheMagicError(CacheError):
    """The file does not start with the cache magic string."""


class CacheVersionError(CacheError):
    """The file uses an unsupported cache version."""


class CacheFingerprintError(CacheError):
    """The cached maps were built for a different discretization."""


class CacheCorruptError(CacheError):
    """The file is truncated or structurally inconsistent."""


@dataclass(frozen=True)
class MapCache:
    """Versioned container of compressed maps sharing one fingerprint."""

    fingerprint: str
    maps: tuple[LowRankMap, ...]
    version: int = VERSION

    def __post_init__(self):
        for mp in self.maps:
            if mp.fingerprint != self.fingerprint:
                raise CacheFingerprintError(
                    f"map for subdomain {mp.owner} carries fingerprint "
                    f"{mp.fingerprint[:12]}..., cache expects {self.fingerprint[:12]}..."
                )


def save_cache(path: str, cache: MapCache) -> None:
    """Serialize a map cache atomically (write then rename)."""
    fp = cache.fingerprint.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(fp)), fp,
             struct.pack("<I", len(cache.maps))]
    for mp in cache.maps:
        n_nodes, n_v = mp.field_shape
        parts.append(struct.pack("<IIIII", mp.owner, mp.rank, mp.nu.shape[0], n_nodes, n_v))
        for a in (mp.sigma, mp.domain_weights, mp.nu, mp.mu):
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CacheCorruptError(
                f"cache file truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)


def load_cache(path: str, expected_fingerprint: str | None = None) -> MapCache:
    """Read a map cache, verifying magic, version, and fingerprint."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CacheError(f"cannot read cache {path}: {e}") from e
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise CacheMagicError(f"{path} is not a map cache (bad magic)")
    version, fp_len = struct.unpack("<II", r.take(8))
    if version != VERSION:
        raise CacheVersionError(f"unsupported cache version {version}, expected {VERSION}")
    fingerprint = r.take(fp_len).decode("utf-8")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CacheFingerprintError(
            f"cache was built for fingerprint {fingerprint[:12]}..., "
            f"current discretization is {expected_fingerprint[:12]}...; rebuild the maps"
        )
    (count,) = struct.unpack("<I", r.take(4))
    maps = []
    for _ in range(count):
        owner, rank, n_b, n_nodes, n_v = struct.unpack("<IIIII", r.take(20))
        sigma = r.array(rank)
        weights = r.array(n_b)
        nu = r.array(n_b * rank).reshape(n_b, rank)
        mu = r.array(n_nodes * n_v * rank).reshape(n_nodes, n_v, rank)
        maps.append(LowRankMap(
            owner=owner, sigma=sigma, nu=nu, mu=mu,
            domain_weights=weights, fingerprint=fingerprint,
        ))
    if r.pos != len(blob):
        raise CacheCorruptError(f"{len(blob) - r.pos} unexpected trailing bytes in {path}")
    return MapCache(fingerprint=fingerprint, maps=tuple(maps))

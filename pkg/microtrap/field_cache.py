#!/usr/bin/env python3
"""
Binary cache for solved basis fields.

File layout (little-endian):
    8 bytes   magic b"MTFIELD\\0"
    int64     format version
    int64 ×3  grid dims (nx, ny, nz)
    float64×3 origin [µm]
    float64×3 spacing [µm]
    float64 × nx·ny·nz samples, C order (x slowest)
"""
import hashlib
import json
import logging
import os
import tempfile
from typing import Optional

import numpy as np

from microtrap.errors import CacheError
from microtrap.field_solver import Grid3D, PotentialField
from microtrap.geometry import TrapGeometry

logger = logging.getLogger(__name__)

MAGIC = b"MTFIELD\0"
FORMAT_VERSION = 1
HEADER_BYTES = len(MAGIC) + 8 + 3 * 8 + 3 * 8 + 3 * 8


def encode_field(field: PotentialField) -> bytes:
    grid = field.grid
    header = (
        MAGIC
        + np.array([FORMAT_VERSION], dtype="<i8").tobytes()
        + np.asarray(grid.shape, dtype="<i8").tobytes()
        + np.asarray(grid.origin, dtype="<f8").tobytes()
        + np.asarray(grid.spacing, dtype="<f8").tobytes()
    )
    return header + np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def decode_field(payload: bytes, label: str) -> PotentialField:
    """Parse a cache payload, raising CacheError on any header or size mismatch."""
    if len(payload) < HEADER_BYTES or payload[: len(MAGIC)] != MAGIC:
        raise CacheError("bad magic")
    pos = len(MAGIC)
    version = int(np.frombuffer(payload, dtype="<i8", count=1, offset=pos)[0])
    if version != FORMAT_VERSION:
        raise CacheError(f"unsupported cache version {version}")
    pos += 8
    dims = np.frombuffer(payload, dtype="<i8", count=3, offset=pos)
    pos += 24
    origin = np.frombuffer(payload, dtype="<f8", count=3, offset=pos)
    pos += 24
    spacing = np.frombuffer(payload, dtype="<f8", count=3, offset=pos)
    pos += 24
    if np.any(dims < 3) or np.any(spacing <= 0):
        raise CacheError("invalid grid header")
    n = int(np.prod(dims))
    if len(payload) - pos != 8 * n:
        raise CacheError(f"expected {n} samples, found {(len(payload) - pos) // 8}")
    values = np.frombuffer(payload, dtype="<f8", count=n, offset=pos).reshape(tuple(dims)).copy()
    grid = Grid3D(tuple(origin), tuple(spacing), tuple(int(d) for d in dims))
    return PotentialField(grid, values, label)


def write_field(field: PotentialField, path: str) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(encode_field(field))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_field(path: str, label: str) -> PotentialField:
    with open(path, "rb") as f:
        return decode_field(f.read(), label)


class FieldCache:
    """Directory of cached basis fields keyed by (geometry, grid, electrode, tolerance)."""

    def __init__(self, directory: str):
        self.directory = directory

    def key(self, geometry: TrapGeometry, grid: Grid3D, label: str, tolerance: float) -> str:
        payload = json.dumps(
            {
                "geometry": geometry.hash,
                "grid": grid.key(),
                "electrode": label,
                "tolerance": tolerance,
                "version": FORMAT_VERSION,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def path_for(self, geometry: TrapGeometry, grid: Grid3D, label: str, tolerance: float) -> str:
        return os.path.join(
            self.directory, f"{label}-{self.key(geometry, grid, label, tolerance)}.mtf"
        )

    def exists(self, geometry: TrapGeometry, grid: Grid3D, label: str, tolerance: float) -> bool:
        return os.path.exists(self.path_for(geometry, grid, label, tolerance))

    def load(
        self, geometry: TrapGeometry, grid: Grid3D, label: str, tolerance: float
    ) -> Optional[PotentialField]:
        path = self.path_for(geometry, grid, label, tolerance)
        if not os.path.exists(path):
            logger.info("Cache miss for %s", label)
            return None
        try:
            field = read_field(path, label)
        except CacheError as e:
            logger.warning("Corrupt cache file %s (%s); re-solving", path, e)
            os.unlink(path)
            return None
        if field.grid != grid:
            logger.warning("Cache file %s grid mismatch; re-solving", path)
            os.unlink(path)
            return None
        logger.info("Cache hit for %s (%s)", label, path)
        return field

    def store(self, geometry: TrapGeometry, field: PotentialField, tolerance: float) -> str:
        path = self.path_for(geometry, field.grid, field.label, tolerance)
        write_field(field, path)
        logger.info("Cached %s at %s", field.label, path)
        return path

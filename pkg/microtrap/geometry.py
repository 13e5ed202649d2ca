#!/usr/bin/env python3
"""
Trap geometry: parametric two-layer segmented electrode layout.

Coordinate frame [µm]:
- x along the trap axis, x = 0 at the left edge of segment 0
- y across the slit, the slit centred on y = 0
- z normal to the wafers, layers at z = ±layer_separation/2

The top layer carries the DC fingers on y < 0 and the RF electrode on y > 0;
the bottom layer is the same layout rotated by π about the x axis, so the RF
null lies on the x axis. Electrodes are unions of axis-aligned boxes.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from microtrap.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

GEOMETRY_FORMAT = "microtrap-geometry"
GEOMETRY_VERSION = 1

ZONES = ("storage", "transfer", "processing")

Box = Tuple[float, float, float, float, float, float]  # x0, x1, y0, y1, z0, z1


class TrapSpec(BaseModel):
    """Dimensions of the segmented trap [µm] and segment counts per zone."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    storage_slit_h_um: float = 500.0
    processing_slit_g_um: float = 250.0
    storage_seg_width_d_um: float = 250.0
    processing_seg_width_w_um: float = 100.0
    inter_electrode_gap_um: float = 30.0
    finger_length_um: float = 200.0
    rf_notch_length_um: float = 60.0
    n_storage: int = 9
    n_transfer: int = 3
    n_processing: int = 19
    # calibration: 500:125 and 250:125 give the 4:1 and 2:1 cross sections
    layer_separation_um: float = 125.0
    wafer_thickness_um: float = 125.0

    @field_validator(
        "storage_slit_h_um",
        "processing_slit_g_um",
        "storage_seg_width_d_um",
        "processing_seg_width_w_um",
        "inter_electrode_gap_um",
        "finger_length_um",
        "rf_notch_length_um",
        "layer_separation_um",
        "wafer_thickness_um",
    )
    @classmethod
    def _positive_length(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("length must be > 0")
        return v

    @field_validator("n_storage", "n_transfer", "n_processing")
    @classmethod
    def _count(cls, v: int) -> int:
        if v < 0:
            raise ValueError("segment count must be >= 0")
        return v

    @model_validator(mode="after")
    def _layout(self) -> "TrapSpec":
        if self.n_pairs < 1:
            raise ValueError("trap needs at least one segment pair")
        if self.processing_slit_g_um > self.storage_slit_h_um:
            raise ValueError("processing slit g must not exceed storage slit h")
        if self.rf_notch_length_um >= self.finger_length_um:
            raise ValueError("RF notch must be shorter than the finger length")
        return self

    @property
    def n_pairs(self) -> int:
        return self.n_storage + self.n_transfer + self.n_processing


def make_spec(**overrides) -> TrapSpec:
    """TrapSpec from keyword overrides, raising GeometryError on invalid values."""
    try:
        return TrapSpec(**overrides)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'spec'}: {err['msg']}" for err in e.errors()
        )
        raise GeometryError(f"Invalid trap spec: {problems}")


@dataclass(frozen=True)
class Electrode:
    """One electrode: kind RF|DC, pair index (None for RF), layer side, boxes [µm]."""

    kind: str
    pair: Optional[int]
    side: str
    boxes: Tuple[Box, ...]

    @property
    def label(self) -> str:
        suffix = "T" if self.side == "top" else "B"
        if self.kind == "RF":
            return f"RF_{suffix}"
        return f"DC{self.pair:02d}{suffix}"

    def contains(self, x: np.ndarray, y: np.ndarray, z: np.ndarray, tol: float = 1e-9):
        """Boolean mask of points inside (or on) any of the electrode's boxes."""
        inside = np.zeros(np.broadcast(x, y, z).shape, dtype=bool)
        for x0, x1, y0, y1, z0, z1 in self.boxes:
            inside |= (
                (x >= x0 - tol)
                & (x <= x1 + tol)
                & (y >= y0 - tol)
                & (y <= y1 + tol)
                & (z >= z0 - tol)
                & (z <= z1 + tol)
            )
        return inside

    def bounds(self) -> Box:
        arr = np.asarray(self.boxes)
        return (
            float(arr[:, 0].min()),
            float(arr[:, 1].max()),
            float(arr[:, 2].min()),
            float(arr[:, 3].max()),
            float(arr[:, 4].min()),
            float(arr[:, 5].max()),
        )


@dataclass(frozen=True)
class TrapGeometry:
    """Immutable electrode set built from a TrapSpec."""

    spec: TrapSpec
    electrodes: Tuple[Electrode, ...]
    seg_x0: Tuple[float, ...]
    seg_x1: Tuple[float, ...]
    slits: Tuple[float, ...]
    zones: Tuple[str, ...]
    hash: str = field(default="")

    @property
    def n_pairs(self) -> int:
        return len(self.seg_x0)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.seg_x0) + np.asarray(self.seg_x1))

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.seg_x1) - np.asarray(self.seg_x0)

    @property
    def x_extent(self) -> Tuple[float, float]:
        return (self.seg_x0[0], self.seg_x1[-1])

    @property
    def zone_map(self) -> Dict[int, str]:
        return dict(enumerate(self.zones))

    @property
    def labels(self) -> List[str]:
        return [e.label for e in self.electrodes]

    @property
    def rf_electrodes(self) -> List[Electrode]:
        return [e for e in self.electrodes if e.kind == "RF"]

    @property
    def dc_electrodes(self) -> List[Electrode]:
        return [e for e in self.electrodes if e.kind == "DC"]

    def electrode(self, label: str) -> Electrode:
        for e in self.electrodes:
            if e.label == label:
                return e
        raise GeometryError(f"Unknown electrode: {label}")

    def dc_pair(self, index: int) -> Tuple[Electrode, Electrode]:
        if not 0 <= index < self.n_pairs:
            raise GeometryError(f"Segment pair {index} out of range 0..{self.n_pairs - 1}")
        top = self.electrode(f"DC{index:02d}T")
        bottom = self.electrode(f"DC{index:02d}B")
        return top, bottom

    def pair_label(self, index: int) -> str:
        return f"DC{index:02d}"

    def zone_center(self, zone: str) -> float:
        """Axial centre [µm] of the middle segment of a zone."""
        idx = [i for i, z in enumerate(self.zones) if z == zone]
        if not idx:
            raise GeometryError(f"Trap has no {zone} zone")
        return float(self.centers[idx[len(idx) // 2]])

    def slit_at(self, x: float) -> float:
        """Slit width [µm] of the segment governing axial position x."""
        index, _ = segment_at(self, x)
        return self.slits[index]


def _mirror(box: Box) -> Box:
    x0, x1, y0, y1, z0, z1 = box
    return (x0, x1, -y1, -y0, -z1, -z0)


def _segment_layout(spec: TrapSpec):
    zones: List[str] = (
        ["storage"] * spec.n_storage
        + ["transfer"] * spec.n_transfer
        + ["processing"] * spec.n_processing
    )
    widths, slits = [], []
    for i, zone in enumerate(zones):
        if zone == "processing":
            widths.append(spec.processing_seg_width_w_um)
            slits.append(spec.processing_slit_g_um)
        elif zone == "storage":
            widths.append(spec.storage_seg_width_d_um)
            slits.append(spec.storage_slit_h_um)
        else:
            # linear taper from h to g sampled at the transfer segment centre
            k = i - spec.n_storage
            frac = (k + 0.5) / spec.n_transfer
            widths.append(spec.storage_seg_width_d_um)
            slits.append(
                spec.storage_slit_h_um
                + (spec.processing_slit_g_um - spec.storage_slit_h_um) * frac
            )
    x0, x1 = [], []
    pos = 0.0
    for w in widths:
        x0.append(pos)
        x1.append(pos + w)
        pos += w + spec.inter_electrode_gap_um
    return zones, x0, x1, slits


def build_trap(spec: TrapSpec) -> TrapGeometry:
    """
    Build the electrode set for a trap specification.

    Args:
        spec: Validated trap dimensions

    Returns:
        TrapGeometry with 2 RF electrodes and 2 DC electrodes per segment pair
    """
    zones, x0, x1, slits = _segment_layout(spec)
    s2 = spec.layer_separation_um / 2.0
    t = spec.wafer_thickness_um
    finger = spec.finger_length_um
    top_z = (s2, s2 + t)

    electrodes: List[Electrode] = []
    rf_top: List[Box] = []
    for i in range(len(zones)):
        half = slits[i] / 2.0
        dc_box = (x0[i], x1[i], -half - finger, -half, top_z[0], top_z[1])
        electrodes.append(Electrode("DC", i, "top", (dc_box,)))
        electrodes.append(Electrode("DC", i, "bottom", (_mirror(dc_box),)))
        rf_top.append((x0[i], x1[i], half, half + finger, top_z[0], top_z[1]))
        if i + 1 < len(zones):
            # notch opposite the DC cut
            edge = max(slits[i], slits[i + 1]) / 2.0 + spec.rf_notch_length_um
            rf_top.append((x1[i], x0[i + 1], edge, half + finger, top_z[0], top_z[1]))

    electrodes.append(Electrode("RF", None, "top", tuple(rf_top)))
    electrodes.append(Electrode("RF", None, "bottom", tuple(_mirror(b) for b in rf_top)))

    geometry = TrapGeometry(
        spec=spec,
        electrodes=tuple(electrodes),
        seg_x0=tuple(x0),
        seg_x1=tuple(x1),
        slits=tuple(slits),
        zones=tuple(zones),
        hash=geometry_hash(spec),
    )
    overlaps = find_overlaps(geometry)
    if overlaps:
        raise GeometryError(f"Electrode volumes overlap: {overlaps[:3]}")
    logger.debug("Built trap with %d pairs, hash %s", geometry.n_pairs, geometry.hash[:12])
    return geometry


def geometry_hash(spec: TrapSpec) -> str:
    """SHA-256 over the canonical spec; equal specs give equal geometries."""
    payload = json.dumps(
        {"format": GEOMETRY_FORMAT, "version": GEOMETRY_VERSION, "spec": spec.model_dump()},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def find_overlaps(geometry: TrapGeometry) -> List[Tuple[str, str]]:
    """Pairs of electrode labels whose boxes share a positive volume."""
    owners, boxes = [], []
    for e in geometry.electrodes:
        for b in e.boxes:
            owners.append(e.label)
            boxes.append(b)
    arr = np.asarray(boxes)
    lo, hi = arr[:, 0::2], arr[:, 1::2]
    inter = np.minimum(hi[:, None, :], hi[None, :, :]) - np.maximum(lo[:, None, :], lo[None, :, :])
    clash = np.all(inter > 1e-9, axis=2)
    out = []
    for i, j in zip(*np.nonzero(np.triu(clash, k=1))):
        if owners[i] != owners[j]:
            out.append((owners[i], owners[j]))
    return out


def is_mirror_symmetric(geometry: TrapGeometry, tol: float = 1e-9) -> bool:
    """True if the rotation (x, y, z) → (x, −y, −z) maps the electrode set onto itself."""
    partner = {"top": "bottom", "bottom": "top"}
    by_key = {(e.kind, e.pair, e.side): e for e in geometry.electrodes}
    for e in geometry.electrodes:
        other = by_key.get((e.kind, e.pair, partner[e.side]))
        if other is None:
            return False
        mapped = np.asarray(sorted(_mirror(b) for b in e.boxes))
        target = np.asarray(sorted(other.boxes))
        if mapped.shape != target.shape or not np.allclose(mapped, target, atol=tol):
            return False
    return True


def segment_at(geometry: TrapGeometry, x: float) -> Tuple[int, str]:
    """
    Segment pair index and zone label governing axial position x [µm].

    Positions inside a gap resolve to the nearer segment; the exact gap
    midpoint resolves to the lower index.

    Raises:
        GeometryError: x outside the trap's axial extent
    """
    lo, hi = geometry.x_extent
    if not lo <= x <= hi:
        raise GeometryError(f"x = {x} µm outside trap extent [{lo}, {hi}] µm")
    x0 = np.asarray(geometry.seg_x0)
    x1 = np.asarray(geometry.seg_x1)
    i = int(np.searchsorted(x0, x, side="right")) - 1
    if x <= x1[i]:
        index = i
    else:
        d_left = x - x1[i]
        d_right = x0[i + 1] - x
        index = i if d_left <= d_right else i + 1
    return index, geometry.zones[index]


def geometry_to_dict(geometry: TrapGeometry) -> Dict:
    return {
        "format": GEOMETRY_FORMAT,
        "version": GEOMETRY_VERSION,
        "spec": geometry.spec.model_dump(),
        "hash": geometry.hash,
        "electrodes": [
            {
                "label": e.label,
                "kind": e.kind,
                "pair": e.pair,
                "side": e.side,
                "boxes": [list(b) for b in e.boxes],
            }
            for e in geometry.electrodes
        ],
    }


def save_geometry(geometry: TrapGeometry, path: str) -> None:
    with open(path, "w") as f:
        json.dump(geometry_to_dict(geometry), f, indent=2)


def load_geometry(path: str) -> TrapGeometry:
    """Rebuild a geometry from a saved document and verify its hash."""
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Geometry file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})")
    if doc.get("format") != GEOMETRY_FORMAT:
        raise ConfigError(f"{path}: not a geometry document")
    spec = make_spec(**doc.get("spec", {}))
    geometry = build_trap(spec)
    if doc.get("hash") and doc["hash"] != geometry.hash:
        raise GeometryError(f"{path}: geometry hash mismatch")
    return geometry

"""Needle geometry catalog.

Every needle is a planar curve sampled as a dense polyline in a local
frame, then placed in the world by a planar pose (position, in-plane
rotation, height above the plane).  The standard needle is a semicircle
of 5 mm radius; "small" and "large" are the standard shape scaled by
0.75 and 1.3; the two irregular shapes keep the standard characteristic
size (10 mm chord) but change curvature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from needlepick.errors import ConfigurationError

NEEDLE_SHAPES = ("standard", "small", "large", "irregular_a", "irregular_b")

SHAPE_SCALES = {
    "standard": 1.0,
    "small": 0.75,
    "large": 1.3,
    "irregular_a": 1.0,
    "irregular_b": 1.0,
}

STANDARD_ARC_RADIUS_MM = 5.0
STANDARD_ARC_SPAN_DEG = 180.0
WIRE_RADIUS_MM = 0.4

_N_CURVE_POINTS = 64


@dataclass
class NeedleSpec:
    """Declarative needle description (shape family + optional overrides)."""

    shape_id: str = "standard"
    scale: float | None = None
    arc_radius_mm: float = STANDARD_ARC_RADIUS_MM
    arc_span_deg: float = STANDARD_ARC_SPAN_DEG

    def __post_init__(self):
        if self.shape_id not in NEEDLE_SHAPES:
            raise ConfigurationError(
                f"unknown needle shape {self.shape_id!r}; expected one of {NEEDLE_SHAPES}"
            )
        if self.scale is None:
            self.scale = SHAPE_SCALES[self.shape_id]
        if self.scale <= 0:
            raise ConfigurationError("needle scale must be positive")

    def to_dict(self) -> dict:
        return {
            "shape_id": self.shape_id,
            "scale": self.scale,
            "arc_radius_mm": self.arc_radius_mm,
            "arc_span_deg": self.arc_span_deg,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NeedleSpec":
        return cls(**data)


@dataclass
class NeedlePose:
    """Planar needle placement: XY position, in-plane angle, height."""

    xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    theta_deg: float = 0.0
    z: float = 0.0

    def copy(self) -> "NeedlePose":
        return NeedlePose(self.xy.copy(), self.theta_deg, self.z)


def _local_curve(spec: NeedleSpec) -> np.ndarray:
    """Sample the needle curve in its local frame, centered on its centroid."""
    r = spec.arc_radius_mm
    if spec.shape_id in ("standard", "small", "large"):
        span = np.deg2rad(spec.arc_span_deg)
        theta = np.linspace(0.0, span, _N_CURVE_POINTS)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    elif spec.shape_id == "irregular_a":
        # C-shape with a flattened tail: 2/3 of the arc plus a straight
        # tangent segment of the remaining arc length.
        span = np.deg2rad(spec.arc_span_deg) * (2.0 / 3.0)
        n_arc = int(_N_CURVE_POINTS * 2 / 3)
        theta = np.linspace(0.0, span, n_arc)
        arc = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        tangent = np.array([-np.sin(span), np.cos(span)])
        seg_len = r * np.deg2rad(spec.arc_span_deg) / 3.0
        t = np.linspace(0.0, seg_len, _N_CURVE_POINTS - n_arc + 1)[1:]
        seg = arc[-1] + t[:, None] * tangent[None, :]
        pts = np.concatenate([arc, seg], axis=0)
    elif spec.shape_id == "irregular_b":
        # S-curve spanning the same 2r chord as the standard semicircle.
        half = _N_CURVE_POINTS // 2
        t1 = np.linspace(np.pi, 0.0, half)
        left = np.stack([-r / 2 + (r / 2) * np.cos(t1), (r / 2) * np.sin(t1)], axis=1)
        t2 = np.linspace(np.pi, 2 * np.pi, _N_CURVE_POINTS - half + 1)[1:]
        right = np.stack([r / 2 + (r / 2) * np.cos(t2), (r / 2) * np.sin(t2)], axis=1)
        pts = np.concatenate([left, right], axis=0)
    else:  # pragma: no cover - guarded by NeedleSpec validation
        raise ConfigurationError(f"unknown shape {spec.shape_id!r}")
    pts = pts * spec.scale
    return pts - pts.mean(axis=0)


def needle_points(spec: NeedleSpec, pose: NeedlePose) -> np.ndarray:
    """World-frame (K, 3) polyline points for a posed needle."""
    local = _local_curve(spec)
    th = np.deg2rad(pose.theta_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    xy = local @ rot.T + pose.xy[None, :]
    z = np.full((xy.shape[0], 1), pose.z)
    return np.concatenate([xy, z], axis=1)


def needle_extent(spec: NeedleSpec) -> float:
    """Max radial distance of the curve from its centroid, plus wire radius."""
    local = _local_curve(spec)
    return float(np.linalg.norm(local, axis=1).max() + WIRE_RADIUS_MM)

"""Synthetic top-down RGB-D rendering of the needle-picking scene.

Pure-color rasterization: red background, green needle, blue gripper,
so color segmentation downstream is exact.  The depth channel is a
normalized distance map from an overhead camera; optional Gaussian
noise (std ``noise_level`` in normalized units, i.e. 255*noise_level in
8-bit units) corrupts depth only, never RGB.  Overlap is resolved by a
fixed draw order: the gripper is drawn over the needle.
"""

from __future__ import annotations

import numpy as np
import cv2

from needlepick.env.needle import WIRE_RADIUS_MM

BACKGROUND_RGB = (255, 0, 0)
NEEDLE_RGB = (0, 255, 0)
GRIPPER_RGB = (0, 0, 255)

# Overhead camera height above the plane, mm.  depth = (cam_z - z) / cam_z,
# so the plane itself renders as 1.0 and higher objects are smaller values.
CAMERA_HEIGHT_MM = 60.0

# Gripper footprint in its local frame (fingers along +X, jaw gap along Y).
JAW_PAD_LEN_MM = 3.0
JAW_PAD_WIDTH_MM = 1.2
JAW_GAP_OPEN_MM = 6.0
JAW_GAP_CLOSED_MM = 1.5
PALM_LEN_MM = 3.5
PALM_HALF_WIDTH_MM = 2.0


def depth_of_height(z: float) -> float:
    """Normalized camera distance of a point at height z mm over the plane."""
    return float((CAMERA_HEIGHT_MM - z) / CAMERA_HEIGHT_MM)


class SceneRenderer:
    """Rasterizes gripper and needle over the workspace plane."""

    def __init__(self, resolution: int, workspace: tuple):
        (self.xmin, self.xmax), (self.ymin, self.ymax), _ = workspace
        self.height = self.width = int(resolution)
        self._sx = (self.width - 1) / (self.xmax - self.xmin)
        self._sy = (self.height - 1) / (self.ymax - self.ymin)

    def world_to_px(self, xy: np.ndarray) -> np.ndarray:
        """Map world XY (mm) to integer pixel (col, row); +y points up."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        col = (xy[:, 0] - self.xmin) * self._sx
        row = (self.ymax - xy[:, 1]) * self._sy
        return np.stack([np.rint(col), np.rint(row)], axis=1).astype(np.int32)

    def _px_per_mm(self) -> float:
        return (self._sx + self._sy) / 2.0

    def _gripper_polys(self, position, yaw_deg, jaw_open) -> list[np.ndarray]:
        gap = JAW_GAP_OPEN_MM if jaw_open else JAW_GAP_CLOSED_MM
        half_pad = JAW_PAD_LEN_MM / 2.0
        rects = []
        for sign in (1.0, -1.0):
            y0 = sign * gap / 2.0
            y1 = sign * (gap / 2.0 + JAW_PAD_WIDTH_MM)
            rects.append([(-half_pad, y0), (half_pad, y0), (half_pad, y1), (-half_pad, y1)])
        x0 = -half_pad - PALM_LEN_MM
        rects.append(
            [
                (x0, -PALM_HALF_WIDTH_MM),
                (-half_pad, -PALM_HALF_WIDTH_MM),
                (-half_pad, PALM_HALF_WIDTH_MM),
                (x0, PALM_HALF_WIDTH_MM),
            ]
        )
        th = np.deg2rad(yaw_deg)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        polys = []
        for rect in rects:
            world = np.asarray(rect) @ rot.T + np.asarray(position[:2])[None, :]
            polys.append(self.world_to_px(world))
        return polys

    def render(
        self,
        needle_pts: np.ndarray,
        gripper_position: np.ndarray,
        gripper_yaw_deg: float,
        jaw_open: bool,
        noise_level: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, np.ndarray, dict]:
        """Render the scene; returns (rgb uint8, depth float32 in [0,1], coverage).

        ``coverage`` reports the exact pure-color pixel counts of each
        object after draw-order occlusion, for ground-truth checks.
        """
        if noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        rgb = np.empty((self.height, self.width, 3), dtype=np.uint8)
        rgb[..., 0], rgb[..., 1], rgb[..., 2] = BACKGROUND_RGB
        depth = np.full((self.height, self.width), 1.0, dtype=np.float32)

        needle_px = self.world_to_px(needle_pts[:, :2]).reshape(-1, 1, 2)
        thickness = max(1, int(round(2 * WIRE_RADIUS_MM * self._px_per_mm())))
        needle_depth = depth_of_height(float(needle_pts[:, 2].mean()))
        cv2.polylines(rgb, [needle_px], False, NEEDLE_RGB, thickness)
        cv2.polylines(depth, [needle_px], False, needle_depth, thickness)

        polys = self._gripper_polys(gripper_position, gripper_yaw_deg, jaw_open)
        gripper_depth = depth_of_height(float(gripper_position[2]))
        cv2.fillPoly(rgb, polys, GRIPPER_RGB)
        cv2.fillPoly(depth, polys, gripper_depth)

        coverage = {
            "needle_px": int(np.sum(np.all(rgb == NEEDLE_RGB, axis=-1))),
            "gripper_px": int(np.sum(np.all(rgb == GRIPPER_RGB, axis=-1))),
        }
        if noise_level > 0:
            if rng is None:
                rng = np.random.default_rng()
            depth = depth + rng.normal(0.0, noise_level, depth.shape).astype(np.float32)
            np.clip(depth, 0.0, 1.0, out=depth)
        return rgb, depth, coverage

"""Spotlight observation pipeline: raw RGB-D frame -> 64x64x3 image.

A MOBA-minimap-style packing of the scene into the small image the world
model can afford:

* channel 0: global mixed map - masked gripper+needle depth with the
  zoom box outline burned in, clipped to [0, 255], resized,
* channel 1: needle depth cropped to the needle-centric zoom box,
* channel 2: gripper depth cropped to the same box,
* a 4-row bottom strip additively encodes the scalar signals (task
  state in channel 0, jaw state in channel 1).

All resizing is nearest-neighbor so masks stay binary and outputs are
bit-reproducible.  The zoom box is a square centered on the needle
mask's bounding box with side (1 + margin_ratio) * max(bbox side); when
the needle mask is empty the previous step's box is reused (full frame
at episode start).  The default margin ratio is 0.3, i.e. a 1.3x
multiplier on the bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from needlepick.env.core import ObservationFrame

DSA_SIZE = 64
STRIP_ROWS = 4
DEFAULT_MARGIN_RATIO = 0.3
TASK_CODE_INTENSITY = 60
JAW_OPEN_INTENSITY = 255

# Color-dominance segmentation thresholds (the renderer emits pure colors,
# so these are generous).
DOMINANCE_MARGIN = 40
MIN_CHANNEL_VALUE = 100

# Box outline: intensity fixed at 255; thickness scales with resolution so
# roughly one outline pixel survives the nearest-neighbor resize to 64x64.
BOX_OUTLINE_INTENSITY = 255.0


@dataclass
class SegmentationMasks:
    needle: np.ndarray   # (H, W) bool
    gripper: np.ndarray  # (H, W) bool


@dataclass(frozen=True)
class ZoomBox:
    """Square crop window: top-left (row, col) and side length in pixels."""

    row: int
    col: int
    side: int

    @property
    def center(self) -> tuple[float, float]:
        return (self.row + self.side / 2.0, self.col + self.side / 2.0)


def segment_colors(frame: ObservationFrame) -> SegmentationMasks:
    """Dominant-color masks for needle (green) and gripper (blue)."""
    rgb = frame.rgb.astype(np.int16)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    needle = (g > r + DOMINANCE_MARGIN) & (g > b + DOMINANCE_MARGIN) & (g >= MIN_CHANNEL_VALUE)
    gripper = (b > r + DOMINANCE_MARGIN) & (b > g + DOMINANCE_MARGIN) & (b >= MIN_CHANNEL_VALUE)
    return SegmentationMasks(needle=needle, gripper=gripper)


def gate_depth(depth: np.ndarray, masks: SegmentationMasks) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise-masked depth: (gripper-gated, needle-gated)."""
    if depth.shape != masks.needle.shape or depth.shape != masks.gripper.shape:
        raise ValueError(
            f"depth shape {depth.shape} does not match mask shape {masks.needle.shape}"
        )
    depth = depth.astype(np.float32)
    return depth * masks.gripper, depth * masks.needle


def full_frame_box(shape: tuple[int, int]) -> ZoomBox:
    h, w = shape[:2]
    side = min(h, w)
    return ZoomBox(row=(h - side) // 2, col=(w - side) // 2, side=side)


def compute_zoom_box(
    needle_mask: np.ndarray,
    margin_ratio: float = DEFAULT_MARGIN_RATIO,
    previous: ZoomBox | None = None,
) -> ZoomBox:
    """Square needle-centric box; falls back to ``previous`` (or the full
    frame) when the mask is empty."""
    h, w = needle_mask.shape
    rows = np.flatnonzero(needle_mask.any(axis=1))
    cols = np.flatnonzero(needle_mask.any(axis=0))
    if rows.size == 0:
        return previous if previous is not None else full_frame_box((h, w))
    bbox_h = int(rows[-1] - rows[0] + 1)
    bbox_w = int(cols[-1] - cols[0] + 1)
    cy = (rows[0] + rows[-1] + 1) / 2.0
    cx = (cols[0] + cols[-1] + 1) / 2.0
    side = int(round((1.0 + margin_ratio) * max(bbox_h, bbox_w)))
    side = max(2, min(side, min(h, w)))
    # clip to the image, shifting the center minimally to keep the square
    row = int(round(cy - side / 2.0))
    col = int(round(cx - side / 2.0))
    row = max(0, min(row, h - side))
    col = max(0, min(col, w - side))
    return ZoomBox(row=row, col=col, side=side)


def zoom(gated: np.ndarray, box: ZoomBox) -> np.ndarray:
    """Crop the box then resize to DSA_SIZE x DSA_SIZE (nearest-neighbor)."""
    crop = gated[box.row : box.row + box.side, box.col : box.col + box.side]
    return cv2.resize(crop, (DSA_SIZE, DSA_SIZE), interpolation=cv2.INTER_NEAREST)


def _outline_thickness(shape: tuple[int, int]) -> int:
    return max(2, int(round(min(shape[:2]) / DSA_SIZE)))


def box_outline_matrix(shape: tuple[int, int], box: ZoomBox) -> np.ndarray:
    """Full-resolution matrix that is 255 on the box outline, 0 elsewhere."""
    canvas = np.zeros(shape[:2], dtype=np.float32)
    cv2.rectangle(
        canvas,
        (box.col, box.row),
        (box.col + box.side - 1, box.row + box.side - 1),
        BOX_OUTLINE_INTENSITY,
        thickness=_outline_thickness(shape),
    )
    return canvas


def mixed_map(box: ZoomBox, gated_gripper: np.ndarray, gated_needle: np.ndarray) -> np.ndarray:
    """Global map: box outline + masked depths, clipped then resized."""
    canvas = box_outline_matrix(gated_gripper.shape, box) + gated_gripper + gated_needle
    np.clip(canvas, 0.0, 255.0, out=canvas)
    return cv2.resize(canvas, (DSA_SIZE, DSA_SIZE), interpolation=cv2.INTER_NEAREST)


def scalar_overlay(task_state_code: int, jaw_open: bool) -> np.ndarray:
    """Additive 64x64x3 encoding of the scalar signals (bottom strip only)."""
    overlay = np.zeros((DSA_SIZE, DSA_SIZE, 3), dtype=np.float32)
    overlay[-STRIP_ROWS:, :, 0] = TASK_CODE_INTENSITY * int(task_state_code)
    overlay[-STRIP_ROWS:, :, 1] = JAW_OPEN_INTENSITY if jaw_open else 0
    return overlay


def assemble(
    frame: ObservationFrame,
    margin_ratio: float = DEFAULT_MARGIN_RATIO,
    previous_box: ZoomBox | None = None,
) -> tuple[np.ndarray, ZoomBox]:
    """Full pipeline for one frame; returns (uint8 64x64x3 image, box used)."""
    masks = segment_colors(frame)
    depth8 = frame.depth.astype(np.float32) * 255.0
    gated_g, gated_n = gate_depth(depth8, masks)
    box = compute_zoom_box(masks.needle, margin_ratio, previous=previous_box)
    channels = np.stack(
        [mixed_map(box, gated_g, gated_n), zoom(gated_n, box), zoom(gated_g, box)],
        axis=-1,
    )
    image = channels + scalar_overlay(frame.task_state_code, frame.jaw_open)
    np.clip(image, 0.0, 255.0, out=image)
    return image.astype(np.uint8), box


class DsaContext:
    """Per-episode pipeline state: remembers the last non-empty zoom box."""

    provides_scalars = False

    def __init__(self, margin_ratio: float = DEFAULT_MARGIN_RATIO):
        self.margin_ratio = margin_ratio
        self._box: ZoomBox | None = None

    def reset(self):
        self._box = None

    def __call__(self, frame: ObservationFrame) -> np.ndarray:
        image, self._box = assemble(frame, self.margin_ratio, previous_box=self._box)
        return image


# ----------------------------------------------------------------------
# plain-downsample pipeline (spotlight ablation baseline)
# ----------------------------------------------------------------------

MIX_RED_WEIGHT = 0.5
MIX_BLUE_WEIGHT = 0.5


def downsample_image(frame: ObservationFrame) -> np.ndarray:
    """Mixed-channel 64x64x3 downsample: [red/blue mix, blue, depth]."""
    rgb = frame.rgb.astype(np.float32)
    mixed = MIX_RED_WEIGHT * rgb[..., 0] + MIX_BLUE_WEIGHT * rgb[..., 2]
    channels = np.stack([mixed, rgb[..., 2], frame.depth * 255.0], axis=-1)
    np.clip(channels, 0.0, 255.0, out=channels)
    small = cv2.resize(channels, (DSA_SIZE, DSA_SIZE), interpolation=cv2.INTER_NEAREST)
    return small.astype(np.uint8)


class DownsampleContext:
    """Stateless counterpart of DsaContext for the no-spotlight baseline.

    Scalars are not drawn into the image; they ride along as a vector for
    the encoder's scalar branch.
    """

    provides_scalars = True

    def __init__(self):
        pass

    def reset(self):
        pass

    def __call__(self, frame: ObservationFrame) -> np.ndarray:
        return downsample_image(frame)

    @staticmethod
    def scalars(frame: ObservationFrame) -> np.ndarray:
        return np.array([float(frame.task_state_code), float(frame.jaw_open)], dtype=np.float32)


def make_pipeline(name: str, margin_ratio: float = DEFAULT_MARGIN_RATIO):
    """Observation pipeline factory: 'dsa' or 'downsample'."""
    if name == "dsa":
        return DsaContext(margin_ratio)
    if name == "downsample":
        return DownsampleContext()
    raise ValueError(f"unknown observation pipeline {name!r}")

"""Observation pipeline: segmentation, zoom box, mixed map, scalar strip."""

import numpy as np
import pytest

from needlepick.dsa import (
    DEFAULT_MARGIN_RATIO,
    DSA_SIZE,
    DownsampleContext,
    DsaContext,
    JAW_OPEN_INTENSITY,
    STRIP_ROWS,
    TASK_CODE_INTENSITY,
    ZoomBox,
    assemble,
    box_outline_matrix,
    compute_zoom_box,
    downsample_image,
    full_frame_box,
    gate_depth,
    make_pipeline,
    mixed_map,
    scalar_overlay,
    segment_colors,
    zoom,
)
from needlepick.env.core import EnvConfig, NeedlePickEnv, ObservationFrame
from needlepick.env.renderer import BACKGROUND_RGB, GRIPPER_RGB, NEEDLE_RGB


def synthetic_frame(size=100, needle_rc=(40, 60, 10), gripper_rc=(70, 10, 8),
                    task_code=0, jaw_open=True):
    """Flat red frame with one green square and one blue square."""
    rgb = np.zeros((size, size, 3), dtype=np.uint8)
    rgb[...] = BACKGROUND_RGB
    depth = np.ones((size, size), dtype=np.float32)
    r, c, s = needle_rc
    rgb[r : r + s, c : c + s] = NEEDLE_RGB
    depth[r : r + s, c : c + s] = 0.9
    r, c, s = gripper_rc
    rgb[r : r + s, c : c + s] = GRIPPER_RGB
    depth[r : r + s, c : c + s] = 0.7
    return ObservationFrame(rgb, depth, task_code, jaw_open)


class TestSegmentation:
    def test_masks_match_painted_squares(self):
        frame = synthetic_frame()
        masks = segment_colors(frame)
        assert masks.needle.sum() == 100
        assert masks.gripper.sum() == 64
        assert masks.needle[45, 65] and not masks.needle[0, 0]
        assert masks.gripper[74, 14] and not masks.gripper[45, 65]

    def test_masks_match_renderer_coverage(self):
        env = NeedlePickEnv(EnvConfig(render_size=128))
        frame = env.reset(seed=1)
        masks = segment_colors(frame)
        assert int(masks.needle.sum()) == env.last_coverage["needle_px"]
        assert int(masks.gripper.sum()) == env.last_coverage["gripper_px"]

    def test_gate_depth_zeroes_outside_mask(self):
        frame = synthetic_frame()
        masks = segment_colors(frame)
        depth8 = frame.depth * 255.0
        gated_g, gated_n = gate_depth(depth8, masks)
        assert gated_n[45, 65] == pytest.approx(0.9 * 255, abs=0.5)
        assert gated_n[0, 0] == 0.0
        assert gated_g[74, 14] == pytest.approx(0.7 * 255, abs=0.5)
        assert gated_g[45, 65] == 0.0

    def test_gate_depth_shape_mismatch_rejected(self):
        frame = synthetic_frame()
        masks = segment_colors(frame)
        with pytest.raises(ValueError):
            gate_depth(np.ones((10, 10)), masks)


class TestZoomBox:
    def test_side_scales_bbox_by_margin(self):
        frame = synthetic_frame(needle_rc=(40, 60, 10))
        masks = segment_colors(frame)
        box = compute_zoom_box(masks.needle, margin_ratio=0.3)
        assert box.side == round(1.3 * 10)
        # box center tracks the bbox center
        assert abs(box.center[0] - 45) <= 1 and abs(box.center[1] - 65) <= 1

    def test_box_stays_inside_image(self):
        frame = synthetic_frame(needle_rc=(0, 90, 10))  # corner needle
        masks = segment_colors(frame)
        box = compute_zoom_box(masks.needle, margin_ratio=0.3)
        assert box.row >= 0 and box.col >= 0
        assert box.row + box.side <= 100 and box.col + box.side <= 100

    def test_empty_mask_falls_back_to_previous(self):
        previous = ZoomBox(row=5, col=6, side=20)
        empty = np.zeros((100, 100), dtype=bool)
        assert compute_zoom_box(empty, previous=previous) == previous

    def test_empty_mask_without_previous_is_full_frame(self):
        empty = np.zeros((80, 100), dtype=bool)
        box = compute_zoom_box(empty)
        assert box == full_frame_box((80, 100))
        assert box.side == 80

    def test_zoom_output_size_and_values(self):
        frame = synthetic_frame()
        masks = segment_colors(frame)
        _, gated_n = gate_depth(frame.depth * 255.0, masks)
        box = compute_zoom_box(masks.needle)
        out = zoom(gated_n, box)
        assert out.shape == (DSA_SIZE, DSA_SIZE)
        # nearest-neighbor keeps the original value set
        assert set(np.unique(out)) <= set(np.unique(gated_n))
        assert (out > 0).mean() > 0.3  # needle dominates its own zoom box


class TestMixedMapAndScalars:
    def test_outline_present_and_clipped(self):
        frame = synthetic_frame()
        masks = segment_colors(frame)
        gated_g, gated_n = gate_depth(frame.depth * 255.0, masks)
        box = compute_zoom_box(masks.needle)
        outline = box_outline_matrix(gated_n.shape, box)
        assert outline.max() == 255.0
        mixed = mixed_map(box, gated_g, gated_n)
        assert mixed.shape == (DSA_SIZE, DSA_SIZE)
        assert mixed.max() <= 255.0 and mixed.min() >= 0.0

    def test_scalar_overlay_strip(self):
        overlay = scalar_overlay(task_state_code=2, jaw_open=True)
        assert overlay.shape == (DSA_SIZE, DSA_SIZE, 3)
        assert np.all(overlay[-STRIP_ROWS:, :, 0] == 2 * TASK_CODE_INTENSITY)
        assert np.all(overlay[-STRIP_ROWS:, :, 1] == JAW_OPEN_INTENSITY)
        assert overlay[: -STRIP_ROWS].sum() == 0
        assert overlay[..., 2].sum() == 0

    def test_scalar_overlay_jaw_closed(self):
        overlay = scalar_overlay(task_state_code=0, jaw_open=False)
        assert overlay.sum() == 0


class TestAssemble:
    def test_output_contract(self):
        frame = synthetic_frame(task_code=1, jaw_open=True)
        image, box = assemble(frame)
        assert image.shape == (DSA_SIZE, DSA_SIZE, 3)
        assert image.dtype == np.uint8
        strip = image[-STRIP_ROWS:]
        assert np.all(strip[..., 0] >= TASK_CODE_INTENSITY)  # code 1 plus map content
        assert np.all(strip[..., 1] >= JAW_OPEN_INTENSITY - 0)

    def test_needle_channel_is_needle_gated(self):
        frame = synthetic_frame()
        image, box = assemble(frame)
        body = image[: -STRIP_ROWS]
        # channel 1 support comes from the zoomed needle depth
        assert (body[..., 1] > 0).mean() > 0.3

    def test_context_remembers_box_on_occlusion(self):
        ctx = DsaContext()
        frame = synthetic_frame()
        ctx(frame)
        with_needle_box = ctx._box
        hidden = synthetic_frame()
        hidden.rgb[40:50, 60:70] = BACKGROUND_RGB  # paint the needle out
        ctx(hidden)
        assert ctx._box == with_needle_box

    def test_fresh_context_full_frame_on_first_occluded_frame(self):
        ctx = DsaContext()
        hidden = synthetic_frame()
        hidden.rgb[40:50, 60:70] = BACKGROUND_RGB
        ctx(hidden)
        assert ctx._box == full_frame_box(hidden.rgb.shape[:2])


class TestDownsampleBaseline:
    def test_channel_mix(self):
        frame = synthetic_frame()
        image = downsample_image(frame)
        assert image.shape == (DSA_SIZE, DSA_SIZE, 3)
        assert image.dtype == np.uint8
        # background red: ch0 = 0.5*255 (truncated), ch1 = 0, ch2 = depth 1 -> 255
        assert image[0, 0, 0] == int(0.5 * 255)
        assert image[0, 0, 1] == 0
        assert image[0, 0, 2] == 255

    def test_green_needle_vanishes_from_mix(self):
        frame = synthetic_frame(needle_rc=(30, 30, 40))  # big needle survives resize
        image = downsample_image(frame)
        # needle pixels: R=0, B=0 -> both color channels 0 (only depth remains)
        center = image[DSA_SIZE // 2, DSA_SIZE // 2]
        assert center[0] == 0 and center[1] == 0

    def test_pipeline_factory(self):
        assert isinstance(make_pipeline("dsa"), DsaContext)
        assert isinstance(make_pipeline("downsample"), DownsampleContext)
        with pytest.raises(ValueError):
            make_pipeline("identity")

    def test_downsample_scalars_ride_separately(self):
        ctx = make_pipeline("downsample")
        frame = synthetic_frame(task_code=3, jaw_open=False)
        assert ctx.provides_scalars
        scal = ctx.scalars(frame)
        assert scal.tolist() == [3.0, 0.0]


class TestSpotlightProperty:
    def test_needle_fraction_amplified(self):
        env = NeedlePickEnv(EnvConfig(render_size=200))
        ratios = []
        for seed in range(20):
            frame = env.reset(seed=100 + seed)
            image, _ = assemble(frame, DEFAULT_MARGIN_RATIO)
            dsa_frac = (image[: -STRIP_ROWS, :, 1] > 0).mean()
            down = downsample_image(frame)
            # needle pixels survive only in the depth channel; count via resize of the mask
            import cv2

            mask = segment_colors(frame).needle.astype(np.uint8)
            small = cv2.resize(mask, (DSA_SIZE, DSA_SIZE), interpolation=cv2.INTER_NEAREST)
            down_frac = small.mean()
            assert down_frac > 0, "needle should stay visible at this resolution"
            ratios.append(dsa_frac / down_frac)
        assert np.mean(ratios) >= 4.0

"""Surrogate needle-picking environment.

Kinematic, contact-free dynamics: the gripper moves in fixed 2 mm / 10
degree increments inside a 40x60x30 mm workspace, a jaw closure grasps
the needle when a needle point sits within the capture radius of the jaw
center and the gripper height is inside the vertical capture band, and a
grasped needle moves rigidly with the gripper.  A four-state task
machine assigns rewards and termination:

* success (needle lifted above the lift threshold): +1.0, terminal
* horizon exhausted: -0.1, terminal
* workspace violation: -0.01, non-terminal, command replaced by IDLE
* ordinary progress: -0.001

All randomness flows from the reset seed, so full episodes replay
bit-exactly under a fixed action sequence.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from needlepick.env.actions import (
    ActionCommand,
    translation_delta,
    wrap_angle_deg,
    yaw_delta,
)
from needlepick.env.needle import NeedlePose, NeedleSpec, needle_extent, needle_points
from needlepick.env.renderer import SceneRenderer
from needlepick.errors import ConfigurationError, ProtocolError

REWARD_SUCCESS = 1.0
REWARD_HORIZON = -0.1
REWARD_WORKSPACE = -0.01
REWARD_STEP = -0.001

DEFAULT_WORKSPACE = ((-20.0, 20.0), (-30.0, 30.0), (0.0, 30.0))

# Margin kept between sampled initial poses and the workspace walls, mm.
SPAWN_MARGIN_MM = 2.0
# Initial gripper height range, mm (jaw starts open, above the needle).
SPAWN_Z_RANGE_MM = (4.0, 14.0)


class TaskState(IntEnum):
    IN_PROGRESS = 0
    FAIL_WORKSPACE = 1
    FAIL_HORIZON = 2
    SUCCESS = 3


@dataclass
class GripperState:
    position: np.ndarray
    yaw_deg: float
    jaw_open: bool

    def copy(self) -> "GripperState":
        return GripperState(self.position.copy(), self.yaw_deg, self.jaw_open)


@dataclass
class ObservationFrame:
    """Raw rendered observation plus the scalar task/jaw signals."""

    rgb: np.ndarray          # (H, W, 3) uint8
    depth: np.ndarray        # (H, W) float32 in [0, 1]
    task_state_code: int
    jaw_open: bool


@dataclass
class EnvConfig:
    needle: NeedleSpec = field(default_factory=NeedleSpec)
    render_size: int = 600
    noise_level: float = 0.0
    workspace: tuple = DEFAULT_WORKSPACE
    capture_radius_mm: float = 1.5
    capture_band_mm: float = 2.0
    lift_height_mm: float = 6.0
    horizon: int = 100

    def __post_init__(self):
        if isinstance(self.needle, dict):
            self.needle = NeedleSpec.from_dict(self.needle)
        self.workspace = tuple(tuple(float(v) for v in axis) for axis in self.workspace)
        if self.noise_level < 0:
            raise ConfigurationError("noise_level must be >= 0")
        for lo, hi in self.workspace:
            if hi <= lo:
                raise ConfigurationError("workspace bounds must satisfy lo < hi")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["needle"] = self.needle.to_dict()
        data["workspace"] = [list(axis) for axis in self.workspace]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        return cls(**data)


class NeedlePickEnv:
    """Single-writer environment instance; rendering is pure given state."""

    def __init__(self, config: EnvConfig | None = None, seed: int | None = None):
        self.config = config or EnvConfig()
        self.renderer = SceneRenderer(self.config.render_size, self.config.workspace)
        self._rng = np.random.default_rng(seed)
        self.gripper: GripperState | None = None
        self.needle_pose: NeedlePose | None = None
        self.needle_spec: NeedleSpec = self.config.needle
        self.grasped = False
        self._grasp_rel = None  # (rel_xy in gripper frame, rel_theta, rel_z)
        self.t = 0
        self.task_state = TaskState.IN_PROGRESS
        self.terminated = False
        self.last_coverage: dict = {}

    # ------------------------------------------------------------------
    # episode control
    # ------------------------------------------------------------------
    def reset(self, seed: int | None = None, needle: NeedleSpec | None = None) -> ObservationFrame:
        """Start a fresh episode with random needle and gripper poses."""
        if needle is not None:
            if isinstance(needle, dict):
                needle = NeedleSpec.from_dict(needle)
            self.needle_spec = needle
        else:
            self.needle_spec = self.config.needle
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        (xmin, xmax), (ymin, ymax), (zmin, zmax) = self.config.workspace

        margin = needle_extent(self.needle_spec) + SPAWN_MARGIN_MM
        nx = self._rng.uniform(xmin + margin, xmax - margin)
        ny = self._rng.uniform(ymin + margin, ymax - margin)
        ntheta = self._rng.uniform(-180.0, 180.0)
        self.needle_pose = NeedlePose(np.array([nx, ny]), ntheta, 0.0)

        gx = self._rng.uniform(xmin + SPAWN_MARGIN_MM, xmax - SPAWN_MARGIN_MM)
        gy = self._rng.uniform(ymin + SPAWN_MARGIN_MM, ymax - SPAWN_MARGIN_MM)
        gz = self._rng.uniform(*SPAWN_Z_RANGE_MM)
        gyaw = self._rng.uniform(-180.0, 180.0)
        self.gripper = GripperState(np.array([gx, gy, gz]), wrap_angle_deg(gyaw), True)

        self.grasped = False
        self._grasp_rel = None
        self.t = 0
        self.task_state = TaskState.IN_PROGRESS
        self.terminated = False
        return self.render()

    def step(self, action: ActionCommand | int):
        """Apply one command; returns (frame, reward, terminated, task_state)."""
        if self.terminated:
            raise ProtocolError("step() called on a terminated episode")
        action = ActionCommand(action)
        self.t += 1

        workspace_violation = False
        delta = translation_delta(action)
        if delta is not None:
            candidate = self.gripper.position + delta
            if self._in_workspace(candidate):
                self._move_gripper(delta)
            else:
                workspace_violation = True  # command replaced by IDLE
        elif action in (ActionCommand.YAW_POS, ActionCommand.YAW_NEG):
            self._rotate_gripper(yaw_delta(action))
        elif action == ActionCommand.JAW_TOGGLE:
            self._toggle_jaw()
        # IDLE: no state change

        if self.grasped and self._needle_min_z() > self.config.lift_height_mm:
            self.task_state = TaskState.SUCCESS
            self.terminated = True
            reward = REWARD_SUCCESS
        elif self.t >= self.config.horizon:
            self.task_state = TaskState.FAIL_HORIZON
            self.terminated = True
            reward = REWARD_HORIZON
        elif workspace_violation:
            self.task_state = TaskState.FAIL_WORKSPACE
            reward = REWARD_WORKSPACE
        else:
            self.task_state = TaskState.IN_PROGRESS
            reward = REWARD_STEP
        return self.render(), reward, self.terminated, self.task_state

    def render(self, noise_level: float | None = None) -> ObservationFrame:
        """Rasterize the current scene (noise drawn from the episode RNG)."""
        eta = self.config.noise_level if noise_level is None else float(noise_level)
        rgb, depth, coverage = self.renderer.render(
            self.needle_world_points(),
            self.gripper.position,
            self.gripper.yaw_deg,
            self.gripper.jaw_open,
            noise_level=eta,
            rng=self._rng,
        )
        self.last_coverage = coverage
        return ObservationFrame(rgb, depth, int(self.task_state), self.gripper.jaw_open)

    def apply_disturbance(self, max_shift_mm: float = 10.0):
        """Teleport an ungrasped needle to a random nearby pose (robustness probe)."""
        if self.grasped:
            return
        (xmin, xmax), (ymin, ymax), _ = self.config.workspace
        margin = needle_extent(self.needle_spec) + SPAWN_MARGIN_MM
        shift = self._rng.uniform(-max_shift_mm, max_shift_mm, size=2)
        xy = self.needle_pose.xy + shift
        xy[0] = np.clip(xy[0], xmin + margin, xmax - margin)
        xy[1] = np.clip(xy[1], ymin + margin, ymax - margin)
        self.needle_pose.xy = xy
        self.needle_pose.theta_deg = wrap_angle_deg(
            self.needle_pose.theta_deg + self._rng.uniform(-45.0, 45.0)
        )

    # ------------------------------------------------------------------
    # kinematics
    # ------------------------------------------------------------------
    def needle_world_points(self) -> np.ndarray:
        return needle_points(self.needle_spec, self.needle_pose)

    def _needle_min_z(self) -> float:
        return float(self.needle_pose.z)

    def _in_workspace(self, position: np.ndarray) -> bool:
        for value, (lo, hi) in zip(position, self.config.workspace):
            if value < lo or value > hi:
                return False
        return True

    def _move_gripper(self, delta: np.ndarray):
        self.gripper.position = self.gripper.position + delta
        if self.grasped:
            self.needle_pose.xy = self.needle_pose.xy + delta[:2]
            self.needle_pose.z += delta[2]

    def _rotate_gripper(self, dyaw: float):
        self.gripper.yaw_deg = wrap_angle_deg(self.gripper.yaw_deg + dyaw)
        if self.grasped:
            # rigid attachment: needle orbits the gripper axis
            th = np.deg2rad(dyaw)
            rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            rel = self.needle_pose.xy - self.gripper.position[:2]
            self.needle_pose.xy = self.gripper.position[:2] + rot @ rel
            self.needle_pose.theta_deg = wrap_angle_deg(self.needle_pose.theta_deg + dyaw)

    def _toggle_jaw(self):
        if self.gripper.jaw_open:
            self.gripper.jaw_open = False
            self._try_grasp()
        else:
            self.gripper.jaw_open = True
            if self.grasped:
                self.grasped = False
                self.needle_pose.z = 0.0  # released needle falls flat to the plane

    def _try_grasp(self):
        pts = self.needle_world_points()
        jaw_xy = self.gripper.position[:2]
        horizontal = np.linalg.norm(pts[:, :2] - jaw_xy[None, :], axis=1)
        vertical = np.abs(self.gripper.position[2] - pts[:, 2])
        captured = (horizontal <= self.config.capture_radius_mm) & (
            vertical <= self.config.capture_band_mm
        )
        if bool(captured.any()):
            self.grasped = True

"""Scripted demonstrator and demonstration harvesting.

The demonstrator reads privileged simulator state (it is not a
visuomotor policy) and runs a phased greedy controller:

1. align the jaw center over the nearest needle point in X/Y, then yaw,
2. descend until the gripper height is inside the capture band,
3. close the jaw,
4. lift until the task machine reports success.

Each phase emits the single command that most reduces that phase's
error; ties break in the fixed order X, Y, Z, yaw.  If a closure missed,
the jaw reopens and alignment restarts.  Only successful episodes are
kept by the collector; the full-size profile collects ~8000 timesteps.
"""

from __future__ import annotations

import logging

import numpy as np

from needlepick.env.actions import ActionCommand, wrap_angle_deg
from needlepick.env.core import NeedlePickEnv
from needlepick.env.episode import Episode

log = logging.getLogger(__name__)

XY_ALIGN_TOL_MM = 1.0
YAW_ALIGN_TOL_DEG = 5.0

# Abort knobs: a healthy demonstrator succeeds nearly always; a rate under
# 10% over 100 consecutive attempts indicates broken grasp tolerances.
_ABORT_WINDOW = 100
_ABORT_MIN_SUCCESSES = 10


def _grasp_target(env: NeedlePickEnv) -> tuple[np.ndarray, float]:
    """Nearest needle point to the jaw center, and the grasp yaw there."""
    pts = env.needle_world_points()
    dists = np.linalg.norm(pts[:, :2] - env.gripper.position[None, :2], axis=1)
    idx = int(dists.argmin())
    # approach perpendicular to the local tangent so the jaws straddle the wire
    lo, hi = max(idx - 1, 0), min(idx + 1, len(pts) - 1)
    tangent = pts[hi, :2] - pts[lo, :2]
    tangent_deg = float(np.rad2deg(np.arctan2(tangent[1], tangent[0])))
    return pts[idx, :2], tangent_deg + 90.0


def _yaw_error(target_deg: float, yaw_deg: float) -> float:
    """Smallest signed yaw error; the jaw is symmetric under 180 degrees."""
    err = wrap_angle_deg(target_deg - yaw_deg)
    if err >= 90.0:
        err -= 180.0
    elif err < -90.0:
        err += 180.0
    return err


def scripted_demo_action(env: NeedlePickEnv) -> ActionCommand:
    """One step of the phased greedy demonstrator (privileged state access)."""
    if env.grasped:
        return ActionCommand.Z_POS
    if not env.gripper.jaw_open:
        return ActionCommand.JAW_TOGGLE  # missed closure: reopen and retry

    target_xy, target_yaw = _grasp_target(env)
    ex = float(target_xy[0] - env.gripper.position[0])
    ey = float(target_xy[1] - env.gripper.position[1])
    if abs(ex) > XY_ALIGN_TOL_MM or abs(ey) > XY_ALIGN_TOL_MM:
        if abs(ex) >= abs(ey):  # tie goes to X
            return ActionCommand.X_POS if ex > 0 else ActionCommand.X_NEG
        return ActionCommand.Y_POS if ey > 0 else ActionCommand.Y_NEG

    eyaw = _yaw_error(target_yaw, env.gripper.yaw_deg)
    if abs(eyaw) > YAW_ALIGN_TOL_DEG:
        return ActionCommand.YAW_POS if eyaw > 0 else ActionCommand.YAW_NEG

    if env.gripper.position[2] > env.config.capture_band_mm:
        return ActionCommand.Z_NEG
    return ActionCommand.JAW_TOGGLE


def run_scripted_episode(env: NeedlePickEnv, seed: int) -> Episode:
    """Roll one full episode under the scripted demonstrator."""
    frame = env.reset(seed=seed)
    frames_rgb = [frame.rgb]
    frames_depth = [frame.depth]
    task_codes = [frame.task_state_code]
    jaw = [frame.jaw_open]
    actions, rewards, discounts = [], [], []
    terminated = False
    while not terminated:
        action = scripted_demo_action(env)
        frame, reward, terminated, _ = env.step(action)
        frames_rgb.append(frame.rgb)
        frames_depth.append(frame.depth)
        task_codes.append(frame.task_state_code)
        jaw.append(frame.jaw_open)
        actions.append(int(action))
        rewards.append(reward)
        discounts.append(0.0 if terminated else 1.0)
    return Episode(
        frames_rgb=np.stack(frames_rgb),
        frames_depth=np.stack(frames_depth),
        task_codes=np.asarray(task_codes, dtype=np.int16),
        jaw_open=np.asarray(jaw, dtype=bool),
        actions=np.asarray(actions, dtype=np.int16),
        rewards=np.asarray(rewards, dtype=np.float32),
        discounts=np.asarray(discounts, dtype=np.float32),
        metadata={
            "seed": int(seed),
            "needle": env.needle_spec.to_dict(),
            "source": "demo",
        },
    )


def collect_demonstrations(env: NeedlePickEnv, n_timesteps: int, seed: int = 0) -> list[Episode]:
    """Harvest successful scripted episodes totalling >= n_timesteps steps."""
    if n_timesteps <= 0:
        return []
    episodes: list[Episode] = []
    collected = 0
    attempt = 0
    window: list[bool] = []
    while collected < n_timesteps:
        episode = run_scripted_episode(env, seed=seed * 1_000_003 + attempt)
        attempt += 1
        window.append(episode.successful)
        if len(window) >= _ABORT_WINDOW:
            if sum(window[-_ABORT_WINDOW:]) < _ABORT_MIN_SUCCESSES:
                raise RuntimeError(
                    "demonstrator success rate below 10% over the last "
                    f"{_ABORT_WINDOW} attempts; check capture radius / band / "
                    "lift-height configuration"
                )
            window = window[-_ABORT_WINDOW:]
        if not episode.successful:
            continue
        episodes.append(episode)
        collected += len(episode)
    log.info(
        "collected %d demo episodes (%d timesteps, %d attempts)",
        len(episodes),
        collected,
        attempt,
    )
    return episodes

"""Discrete command set of the gripper.

The policy chooses among 9 commands: +/-2 mm translations along X, Y, Z,
+/-10 degree rotations about the plane normal, and a jaw toggle.  IDLE is
a tenth, controller-level command (clutch and workspace override); the
actor never samples it and its one-hot encoding is the zero vector.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

TRANSLATION_STEP_MM = 2.0
YAW_STEP_DEG = 10.0

N_POLICY_ACTIONS = 9


class ActionCommand(IntEnum):
    X_POS = 0
    X_NEG = 1
    Y_POS = 2
    Y_NEG = 3
    Z_POS = 4
    Z_NEG = 5
    YAW_POS = 6
    YAW_NEG = 7
    JAW_TOGGLE = 8
    IDLE = 9


_TRANSLATION_DELTAS = {
    ActionCommand.X_POS: np.array([TRANSLATION_STEP_MM, 0.0, 0.0]),
    ActionCommand.X_NEG: np.array([-TRANSLATION_STEP_MM, 0.0, 0.0]),
    ActionCommand.Y_POS: np.array([0.0, TRANSLATION_STEP_MM, 0.0]),
    ActionCommand.Y_NEG: np.array([0.0, -TRANSLATION_STEP_MM, 0.0]),
    ActionCommand.Z_POS: np.array([0.0, 0.0, TRANSLATION_STEP_MM]),
    ActionCommand.Z_NEG: np.array([0.0, 0.0, -TRANSLATION_STEP_MM]),
}


def translation_delta(action: ActionCommand) -> np.ndarray | None:
    """Positional delta in mm for translation commands, None otherwise."""
    delta = _TRANSLATION_DELTAS.get(ActionCommand(action))
    return None if delta is None else delta.copy()


def yaw_delta(action: ActionCommand) -> float:
    """Yaw delta in degrees (zero for non-rotation commands)."""
    if action == ActionCommand.YAW_POS:
        return YAW_STEP_DEG
    if action == ActionCommand.YAW_NEG:
        return -YAW_STEP_DEG
    return 0.0


def action_one_hot(action: ActionCommand | int) -> np.ndarray:
    """9-dim one-hot encoding; IDLE maps to the zero vector."""
    vec = np.zeros(N_POLICY_ACTIONS, dtype=np.float32)
    action = ActionCommand(action)
    if action != ActionCommand.IDLE:
        vec[int(action)] = 1.0
    return vec


def wrap_angle_deg(angle: float) -> float:
    """Normalize an angle to [-180, 180)."""
    return float((angle + 180.0) % 360.0 - 180.0)

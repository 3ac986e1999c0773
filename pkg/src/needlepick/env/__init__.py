"""Kinematic surrogate needle-picking environment."""

from needlepick.env.actions import (
    N_POLICY_ACTIONS,
    TRANSLATION_STEP_MM,
    YAW_STEP_DEG,
    ActionCommand,
    action_one_hot,
)
from needlepick.env.core import EnvConfig, NeedlePickEnv, ObservationFrame, TaskState
from needlepick.env.demos import collect_demonstrations, scripted_demo_action
from needlepick.env.episode import Episode, load_episode, save_episode
from needlepick.env.needle import NEEDLE_SHAPES, NeedleSpec, needle_points

__all__ = [
    "ActionCommand",
    "action_one_hot",
    "N_POLICY_ACTIONS",
    "TRANSLATION_STEP_MM",
    "YAW_STEP_DEG",
    "EnvConfig",
    "NeedlePickEnv",
    "ObservationFrame",
    "TaskState",
    "NeedleSpec",
    "NEEDLE_SHAPES",
    "needle_points",
    "Episode",
    "save_episode",
    "load_episode",
    "collect_demonstrations",
    "scripted_demo_action",
]

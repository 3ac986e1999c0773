"""Demonstration-augmented world-model RL for surrogate needle picking.

The package bundles a deterministic kinematic needle-picking environment,
the spotlight observation pipeline that packs the scene into 64x64x3
images, a recurrent latent world model with actor-critic heads, dual
replay buffers (policy + demonstrations), and the training/evaluation
machinery that ties them together.
"""

__version__ = "0.1.0"

from needlepick.env import ActionCommand, EnvConfig, NeedlePickEnv, NeedleSpec, TaskState

__all__ = [
    "ActionCommand",
    "EnvConfig",
    "NeedlePickEnv",
    "NeedleSpec",
    "TaskState",
    "__version__",
]

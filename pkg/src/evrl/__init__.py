"""Event-camera reinforcement learning at desk scale.

A frame-difference event simulator over a ray-cast renderer, two 100 Hz
control tasks (collision avoidance, tracking), a from-scratch Double DQN
stack, binary event-stream and checkpoint formats, and a TCP service
that turns live event streams into actions.
"""

from .events import (EVENT_DTYPE, EmulatorConfig, Event, accumulate_events,
                     emulate_frame, events_array, inject_impulse_noise)
from .renderer import CameraModel, SceneObject, project, render, vec3
from .envs import (AvoidanceEnv, EnvConfig, StepResult, TrackingEnv,
                   avoidance_reward, episode_return, tracking_reward, wrap_angle)
from .qnet import (AdamState, NetworkConfig, QNetworkParams, adam_step, backward,
                   copy_params, forward, init_adam, init_params)
from .trainer import (EpisodeStats, ReplayBuffer, TrainerConfig, Transition,
                      double_dqn_target, epsilon_greedy, evaluate, summarize, train)
from .eventio import (FormatError, load_checkpoint, read_events, read_events_csv,
                      save_checkpoint, write_events, write_events_csv,
                      write_frame_pgm)
from .service import ActionService, WindowBucketer, offline_actions

__version__ = "0.1.0"

__all__ = [
    "EVENT_DTYPE", "EmulatorConfig", "Event", "accumulate_events",
    "emulate_frame", "events_array", "inject_impulse_noise",
    "CameraModel", "SceneObject", "project", "render", "vec3",
    "AvoidanceEnv", "EnvConfig", "StepResult", "TrackingEnv",
    "avoidance_reward", "episode_return", "tracking_reward", "wrap_angle",
    "AdamState", "NetworkConfig", "QNetworkParams", "adam_step", "backward",
    "copy_params", "forward", "init_adam", "init_params",
    "EpisodeStats", "ReplayBuffer", "TrainerConfig", "Transition",
    "double_dqn_target", "epsilon_greedy", "evaluate", "summarize", "train",
    "FormatError", "load_checkpoint", "read_events", "read_events_csv",
    "save_checkpoint", "write_events", "write_events_csv", "write_frame_pgm",
    "ActionService", "WindowBucketer", "offline_actions",
    "__version__",
]

from .adam import AdamState, adam_step, init_adam
from .backend import BACKEND
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .net import DivergenceError, TrainConfig, backward, forward, loss
from .params import GradVector, ModelParams, init_params
from .scheduler import PlateauScheduler, plateau_events

__all__ = [
    "AdamState",
    "BACKEND",
    "CheckpointError",
    "DivergenceError",
    "GradVector",
    "ModelParams",
    "PlateauScheduler",
    "TrainConfig",
    "adam_step",
    "backward",
    "forward",
    "init_adam",
    "init_params",
    "load_checkpoint",
    "loss",
    "plateau_events",
    "save_checkpoint",
]

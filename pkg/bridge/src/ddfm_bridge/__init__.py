"""ddfm-bridge: serve a pretrained diffusion denoiser over the score wire protocol."""

from .checkpoint import CheckpointError, LoadedModel, load_checkpoint
from .server import BridgeConfig, BridgeServer, serve

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "BridgeServer",
    "CheckpointError",
    "LoadedModel",
    "load_checkpoint",
    "serve",
]

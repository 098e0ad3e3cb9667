"""Loading and validating denoiser checkpoints.

The bridge serves TorchScript archives with a fixed contract:

- ``forward(x, t) -> eps`` where ``x`` is float32 of shape (N, C, H, W),
  ``t`` is int64 of shape (N,) holding 0-based model step indices, and
  the output has the shape of ``x``;
- a ``betas`` buffer (float64, one entry per training step);
- integer attributes ``image_size`` and ``in_channels``.

Converting third-party checkpoint formats into this contract is out of
scope here; wrap the model and ``torch.jit.script``/``save`` it once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class CheckpointError(RuntimeError):
    """The archive does not satisfy the serving contract."""


@dataclass
class LoadedModel:
    module: torch.jit.ScriptModule
    betas: np.ndarray
    image_size: int
    channels: int

    @property
    def steps(self) -> int:
        return len(self.betas)

    def epsilon(self, tensor_hwc: np.ndarray, t_wire: int) -> np.ndarray:
        """Run the denoiser for a 1-based wire step on an (H, W, C) array."""
        if not 1 <= t_wire <= self.steps:
            raise ValueError(f"step {t_wire} outside [1, {self.steps}]")
        x = torch.from_numpy(
            np.ascontiguousarray(tensor_hwc, dtype=np.float32).transpose(2, 0, 1)
        ).unsqueeze(0)
        t = torch.tensor([t_wire - 1], dtype=torch.int64)
        with torch.no_grad():
            out = self.module(x, t)
        if out.shape != x.shape:
            raise CheckpointError(
                f"model returned shape {tuple(out.shape)} for input {tuple(x.shape)}"
            )
        return out.squeeze(0).permute(1, 2, 0).cpu().numpy().astype(np.float64)


def load_checkpoint(path, device: str = "cpu") -> LoadedModel:
    try:
        module = torch.jit.load(str(path), map_location=device)
    except Exception as exc:
        raise CheckpointError(f"cannot load TorchScript archive {path}: {exc}") from exc
    module.eval()

    missing = [name for name in ("betas", "image_size", "in_channels") if not hasattr(module, name)]
    if missing:
        raise CheckpointError(f"checkpoint lacks required attributes: {', '.join(missing)}")
    betas = module.betas.detach().cpu().numpy().astype(np.float64).ravel()
    if betas.ndim != 1 or betas.size < 1 or betas.min() <= 0.0 or betas.max() >= 1.0:
        raise CheckpointError("betas buffer must be 1-D with entries in (0, 1)")
    image_size = int(module.image_size)
    channels = int(module.in_channels)
    if image_size < 1 or channels < 1:
        raise CheckpointError("image_size and in_channels must be positive")
    return LoadedModel(module=module, betas=betas, image_size=image_size, channels=channels)

import numpy as np
import pytest
import torch


class TinyEpsilonNet(torch.nn.Module):
    """Small deterministic noise predictor satisfying the serving contract."""

    def __init__(self, image_size: int = 8, channels: int = 3, steps: int = 12):
        super().__init__()
        torch.manual_seed(0)
        self.conv = torch.nn.Conv2d(channels, channels, 3, padding=1)
        self.register_buffer("betas", torch.linspace(1e-4, 0.05, steps, dtype=torch.float64))
        self.image_size = image_size
        self.in_channels = channels

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        scale = 0.05 * t.to(torch.float32).reshape(-1, 1, 1, 1)
        return self.conv(x) * 0.2 + scale * x


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    module = torch.jit.script(TinyEpsilonNet())
    torch.jit.save(module, str(path))
    return path


@pytest.fixture(scope="session")
def reference_net():
    return TinyEpsilonNet().eval()


def reference_epsilon(net, tensor_hwc: np.ndarray, t_wire: int) -> np.ndarray:
    x = torch.from_numpy(
        np.ascontiguousarray(tensor_hwc, dtype=np.float32).transpose(2, 0, 1)
    ).unsqueeze(0)
    with torch.no_grad():
        out = net(x, torch.tensor([t_wire - 1], dtype=torch.int64))
    return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)

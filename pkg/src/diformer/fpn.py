"""Two-level feature pyramid: x = conv(bn(cat[conv(up(x_l)), x_h]))."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


class FPNFusion(nn.Module):
    """Fuse the low-resolution tap into the high-resolution one.

    ``x_l`` is upsampled x2 along mel and time (nearest), aligned to ``C_h``
    channels with a 1x1 conv, concatenated with ``x_h``, batch-normalized and
    reduced back to ``C_h`` channels by a 3x3 conv. The result is flattened over
    (channel, mel) and returned as ``(B, t_m, C_h * F_h)``.
    """

    def __init__(self, high_channels: int, low_channels: int, momentum: float = 0.1):
        super().__init__()
        self.lateral = nn.Conv2d(low_channels, high_channels, kernel_size=1)
        self.bn = nn.BatchNorm2d(2 * high_channels, momentum=momentum)
        self.out = nn.Conv2d(2 * high_channels, high_channels, kernel_size=3, padding=1)

    def forward(self, x_h: torch.Tensor, x_l: torch.Tensor) -> torch.Tensor:
        squeeze = x_h.dim() == 3
        if squeeze:
            x_h, x_l = x_h.unsqueeze(0), x_l.unsqueeze(0)
        up = F.interpolate(x_l, scale_factor=2, mode="nearest")
        t_m = x_h.shape[-1]
        if up.shape[-1] == t_m + 1:
            up = up[..., :t_m]  # odd t_m: the low-res tap was rounded up
        if up.shape[-2:] != x_h.shape[-2:]:
            raise ShapeError(
                f"upsampled low-res map {tuple(up.shape[-2:])} does not match high-res map "
                f"{tuple(x_h.shape[-2:])}; check the encoder stride schedule"
            )
        x = self.out(self.bn(torch.cat([self.lateral(up), x_h], dim=1)))
        b, c, f, t = x.shape
        x = x.reshape(b, c * f, t).transpose(1, 2)
        return x[0] if squeeze else x

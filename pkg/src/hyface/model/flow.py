"""Normalizing flow of affine residual coupling layers."""
import torch
from torch import nn

from .layers import WN


class Flip(nn.Module):
    def forward(self, x, g=None, reverse=False):
        x = torch.flip(x, [1])
        if reverse:
            return x
        return x, torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)


class ResidualCoupling(nn.Module):
    """Affine coupling: the second half is shifted and scaled by a WN of the first.

    The output projection is zero-initialised, so a fresh layer is the
    identity with zero log-determinant.  Log-scales are soft-clamped to
    ``[-max_log_scale, max_log_scale]``.
    """

    def __init__(self, channels, hidden, kernel_size, n_layers, gin_channels, max_log_scale=3.0):
        super().__init__()
        assert channels % 2 == 0
        self.half = channels // 2
        self.max_log_scale = max_log_scale
        self.pre = nn.Conv1d(self.half, hidden, 1)
        self.enc = WN(hidden, kernel_size, n_layers, gin_channels=gin_channels)
        self.post = nn.Conv1d(hidden, 2 * self.half, 1)
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)

    def _stats(self, x0, g):
        h = self.enc(self.pre(x0), g=g)
        shift, raw = self.post(h).chunk(2, dim=1)
        log_scale = self.max_log_scale * torch.tanh(raw / self.max_log_scale)
        return shift, log_scale

    def forward(self, x, g=None, reverse=False):
        x0, x1 = x[:, : self.half], x[:, self.half :]
        shift, log_scale = self._stats(x0, g)
        if not reverse:
            x1 = shift + x1 * torch.exp(log_scale)
            return torch.cat([x0, x1], dim=1), log_scale.sum(dim=(1, 2))
        x1 = (x1 - shift) * torch.exp(-log_scale)
        return torch.cat([x0, x1], dim=1)


class ResidualCouplingFlow(nn.Module):
    """``n_blocks`` blocks, each ``n_couplings`` x (coupling, channel flip)."""

    def __init__(self, cfg):
        super().__init__()
        self.flows = nn.ModuleList()
        for _ in range(cfg.n_flow_blocks):
            for _ in range(cfg.n_couplings):
                self.flows.append(
                    ResidualCoupling(cfg.latent_dim, cfg.hidden_dim, 5, cfg.flow_layers, gin_channels=cfg.spk_dim)
                )
                self.flows.append(Flip())

    def forward(self, z, s):
        """Return ``(z', log_det)`` with ``log_det`` of shape ``[B]``."""
        g = s.unsqueeze(-1)
        log_det = torch.zeros(z.shape[0], dtype=z.dtype, device=z.device)
        for f in self.flows:
            z, ld = f(z, g=g)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, z, s):
        g = s.unsqueeze(-1)
        for f in reversed(self.flows):
            z = f(z, g=g, reverse=True)
        return z

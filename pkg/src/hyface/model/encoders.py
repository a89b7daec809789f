"""Posterior encoder, prior encoder and the frame-wise F0 decoder (FF)."""
import math

import torch
from torch import nn
from torch.nn import functional as F

from .layers import WN, RelativeTransformer

LOG_STD_MIN = -9.0
LOG_STD_MAX = 2.0


def f0_features(f0, voiced, f0_floor):
    """``[B, T]`` Hz -> ``[B, 2, T]``: log(f0 / floor) on voiced frames, voicing flag."""
    voiced = voiced.to(f0.dtype)
    logp = torch.log(torch.clamp(f0, min=f0_floor) / f0_floor) * voiced
    return torch.stack([logp, voiced], dim=1)


class PosteriorEncoder(nn.Module):
    def __init__(self, in_channels, cfg):
        super().__init__()
        self.pre = nn.Conv1d(in_channels, cfg.hidden_dim, 1)
        self.enc = WN(cfg.hidden_dim, cfg.posterior_kernel, cfg.n_posterior_layers, gin_channels=cfg.spk_dim)
        self.proj = nn.Conv1d(cfg.hidden_dim, 2 * cfg.latent_dim, 1)

    def forward(self, lin, s, noise=None, generator=None):
        """``lin``: ``[B, F, T]``; ``s``: ``[B, spk]``.  Returns ``z, mean, log_std``."""
        x = self.pre(lin)
        x = self.enc(x, g=s.unsqueeze(-1))
        mean, log_std = self.proj(x).chunk(2, dim=1)
        log_std = torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)
        if noise is None:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        z = mean + torch.exp(log_std) * noise
        return z, mean, log_std


class PriorEncoder(nn.Module):
    """Content + frame-wise F0 + speaker -> per-frame Gaussian (before the flow)."""

    def __init__(self, cfg, f0_floor=50.0):
        super().__init__()
        self.f0_floor = f0_floor
        h = cfg.hidden_dim
        self.content_in = nn.Conv1d(cfg.content_dim, h, 1)
        self.f0_in = nn.Conv1d(2, h, 1)
        self.spk_in = nn.Linear(cfg.spk_dim, h)
        self.encoder = RelativeTransformer(h, cfg.n_prior_layers, cfg.n_heads, cfg.attn_window)
        self.proj = nn.Conv1d(h, 2 * cfg.latent_dim, 1)

    def forward(self, content, f0, voiced, s):
        x = self.content_in(content) + self.f0_in(f0_features(f0, voiced, self.f0_floor))
        x = x + self.spk_in(s).unsqueeze(-1)
        x = self.encoder(x)
        mean, log_std = self.proj(x).chunk(2, dim=1)
        return mean, torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)


class FrameF0Decoder(nn.Module):
    """Expand a speaker average F0 into a frame-wise contour.

    The network predicts a log-ratio ``delta`` to the average and a voicing
    logit per frame.  The differentiable training output is
    ``sigmoid(voicing) * f0_avg * exp(delta)`` (Hz, ~0 on unvoiced frames).
    """

    def __init__(self, cfg, f0_floor=50.0):
        super().__init__()
        self.f0_floor = f0_floor
        h = cfg.hidden_dim
        self.content_in = nn.Conv1d(cfg.content_dim, h, 1)
        self.spk_in = nn.Linear(cfg.spk_dim, h)
        self.avg_in = nn.Linear(1, h)
        self.encoder = RelativeTransformer(h, cfg.ff_layers, cfg.n_heads, cfg.attn_window)
        self.proj = nn.Conv1d(h, 2, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.constant_(self.proj.bias, 0.0)
        with torch.no_grad():
            self.proj.bias[1] = 2.0  # start out mostly voiced

    def forward(self, f0_avg, content, s):
        """Returns ``(soft_hz, pitch_hz, voiced_prob)``, each ``[B, T]``."""
        log_avg = torch.log(f0_avg / self.f0_floor).unsqueeze(-1)
        x = self.content_in(content) + self.spk_in(s).unsqueeze(-1) + self.avg_in(log_avg).unsqueeze(-1)
        x = self.encoder(x)
        delta, vlogit = self.proj(x).unbind(dim=1)
        delta = 1.5 * torch.tanh(delta / 1.5)
        pitch = f0_avg.unsqueeze(-1) * torch.exp(delta)
        prob = torch.sigmoid(vlogit)
        return prob * pitch, pitch, prob

"""Neural-source-filter decoder: harmonic sine source + HiFi-GAN-style filter."""
import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .layers import LRELU_SLOPE, get_padding


class SineSource(nn.Module):
    """F0-locked harmonic excitation.

    Voiced samples carry ``n_harmonics`` sines at ``k * f0`` plus a little
    Gaussian noise; unvoiced samples carry noise only.  The harmonics are
    merged by a learnable linear layer followed by ``tanh``.  The merge
    weights start at ``1/k`` (normalised), so an untrained source is
    dominated by the fundamental.
    """

    def __init__(self, sample_rate, hop, n_harmonics=8, sine_amp=0.1, noise_std=0.003):
        super().__init__()
        self.sample_rate = sample_rate
        self.hop = hop
        self.n_harmonics = n_harmonics
        self.sine_amp = sine_amp
        self.noise_std = noise_std
        self.merge = nn.Linear(n_harmonics, 1)
        w = 1.0 / torch.arange(1, n_harmonics + 1, dtype=torch.float32)
        with torch.no_grad():
            self.merge.weight.copy_((w / w.sum() * 2.0)[None, :])
            self.merge.bias.zero_()

    def harmonics(self, f0, generator=None):
        """``f0`` ``[B, T]`` Hz (0 = unvoiced) -> ``[B, N, n_harmonics]``, ``[B, N, 1]`` uv."""
        f0_up = torch.repeat_interleave(f0, self.hop, dim=1)
        uv = (f0_up > 0).to(f0.dtype).unsqueeze(-1)
        k = torch.arange(1, self.n_harmonics + 1, dtype=torch.float64, device=f0.device)
        # cumulative phase in cycles, accumulated in float64 and wrapped
        inc = f0_up.to(torch.float64).unsqueeze(-1) * k / self.sample_rate
        phase = torch.remainder(torch.cumsum(inc, dim=1), 1.0)
        init = torch.rand(f0.shape[0], 1, self.n_harmonics, generator=generator, dtype=torch.float64)
        init[:, :, 0] = 0.0
        phase = torch.remainder(phase + init.to(f0.device), 1.0)
        sines = self.sine_amp * torch.sin(2 * math.pi * phase).to(f0.dtype)
        noise_amp = uv * self.noise_std + (1 - uv) * self.sine_amp / 3
        noise = torch.randn(sines.shape, generator=generator, dtype=f0.dtype) * noise_amp
        return sines * uv + noise, uv

    def forward(self, f0, generator=None):
        """Merged excitation ``[B, 1, T * hop]``."""
        waves, _ = self.harmonics(f0, generator)
        return torch.tanh(self.merge(waves)).transpose(1, 2)


class ResBlock(nn.Module):
    def __init__(self, channels, kernel_size, dilations):
        super().__init__()
        self.convs = nn.ModuleList(
            [nn.Conv1d(channels, channels, kernel_size, dilation=d, padding=get_padding(kernel_size, d)) for d in dilations]
        )

    def forward(self, x):
        for c in self.convs:
            x = x + c(F.leaky_relu(x, LRELU_SLOPE))
        return x


class NSFGenerator(nn.Module):
    """Upsample ``[B, latent, T]`` to ``[B, 1, T * prod(rates)]`` samples.

    At every stage the source excitation, strided down to that stage's
    rate, is added to the activations; the speaker vector is added at the
    input.
    """

    def __init__(self, cfg, sample_rate=16000):
        super().__init__()
        rates = list(cfg.upsample_rates)
        if any(r % 2 for r in rates):
            raise ValueError("upsample rates must be even")
        hop = int(np.prod(rates))
        self.hop = hop
        self.source = SineSource(sample_rate, hop, cfg.n_harmonics)
        c0 = cfg.upsample_initial_channel
        self.conv_pre = nn.Conv1d(cfg.latent_dim, c0, 7, padding=3)
        self.cond = nn.Linear(cfg.spk_dim, c0)
        self.ups = nn.ModuleList()
        self.source_convs = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        ch = c0
        for i, r in enumerate(rates):
            out = max(c0 // (2 ** (i + 1)), 2)
            self.ups.append(nn.ConvTranspose1d(ch, out, 2 * r, stride=r, padding=r // 2))
            stride = int(np.prod(rates[i + 1 :]))
            if stride > 1:
                self.source_convs.append(nn.Conv1d(1, out, 2 * stride, stride=stride, padding=stride // 2))
            else:
                self.source_convs.append(nn.Conv1d(1, out, 1))
            self.resblocks.append(nn.ModuleList([ResBlock(out, k, cfg.resblock_dilations) for k in cfg.resblock_kernels]))
            ch = out
        self.conv_post = nn.Conv1d(ch, 1, 7, padding=3)

    def forward(self, z, f0, s, generator=None, return_source=False):
        src = self.source(f0, generator)
        x = self.conv_pre(z) + self.cond(s).unsqueeze(-1)
        for up, sconv, blocks in zip(self.ups, self.source_convs, self.resblocks):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            x = x + sconv(src)
            x = sum(b(x) for b in blocks) / len(blocks)
        y = torch.tanh(self.conv_post(F.leaky_relu(x)))
        if return_source:
            return y, src
        return y

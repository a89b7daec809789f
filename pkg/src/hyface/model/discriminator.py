"""Period and scale sub-discriminators (HiFi-GAN family, reduced width)."""
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import weight_norm

from .layers import LRELU_SLOPE, get_padding


@dataclass
class DiscriminatorFeatures:
    """``features[k]`` is the list of layer maps of sub-discriminator ``k``."""

    logits: list
    features: list

    @property
    def n_layers(self):
        return [len(f) for f in self.features]


class PeriodDiscriminator(nn.Module):
    def __init__(self, period, channels=16, n_layers=3):
        super().__init__()
        self.period = period
        chans = [1] + [channels * 2**i for i in range(n_layers)]
        self.convs = nn.ModuleList(
            [
                weight_norm(nn.Conv2d(chans[i], chans[i + 1], (5, 1), (3, 1), padding=(get_padding(5), 0)))
                for i in range(n_layers)
            ]
        )
        self.conv_post = weight_norm(nn.Conv2d(chans[-1], 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, x):
        b, c, t = x.shape
        if t % self.period:
            pad = self.period - t % self.period
            x = F.pad(x, (0, pad), "reflect")
            t = t + pad
        x = x.view(b, c, t // self.period, self.period)
        fmap = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return x.flatten(1), fmap


class ScaleDiscriminator(nn.Module):
    def __init__(self, channels=16, n_layers=3):
        super().__init__()
        chans = [1] + [channels * 2**i for i in range(n_layers)]
        self.convs = nn.ModuleList(
            [weight_norm(nn.Conv1d(chans[i], chans[i + 1], 15, 4, groups=1, padding=7)) for i in range(n_layers)]
        )
        self.conv_post = weight_norm(nn.Conv1d(chans[-1], 1, 3, 1, padding=1))

    def forward(self, x):
        fmap = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return x.flatten(1), fmap


class Discriminator(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        subs = [PeriodDiscriminator(p, cfg.disc_channels) for p in cfg.disc_periods]
        subs.append(ScaleDiscriminator(cfg.disc_channels))
        self.subs = nn.ModuleList(subs)

    @property
    def n_layers(self):
        """Number of feature maps ``T`` returned per sub-discriminator."""
        return [len(s.convs) + 1 for s in self.subs]

    def forward(self, y):
        """``y``: ``[B, 1, N]`` -> DiscriminatorFeatures."""
        logits, feats = [], []
        for sub in self.subs:
            lg, fm = sub(y)
            logits.append(lg)
            feats.append(fm)
        return DiscriminatorFeatures(logits, feats)

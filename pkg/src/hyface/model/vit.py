"""Small vision transformers for the face encoder and the average-F0 network."""
import math

import torch
from torch import nn
from torch.nn import functional as F


class ViT(nn.Module):
    """Patch embedding + pre-norm transformer; returns pooled features.

    The pooled vector is the mean of the final token states concatenated
    with the class token, taken from the residual stream (no final norm) so
    that global image statistics survive to the head.
    """

    def __init__(self, image_size=224, patch=32, dim=128, depth=2, heads=4, mlp_ratio=2):
        super().__init__()
        if image_size % patch:
            raise ValueError("image_size must be a multiple of patch")
        self.patch = patch
        n_tokens = (image_size // patch) ** 2
        self.embed = nn.Conv2d(3, dim, patch, stride=patch)
        self.cls = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos = nn.Parameter(torch.randn(1, n_tokens + 1, dim) * 0.02)
        layer = nn.TransformerEncoderLayer(
            dim, heads, dim * mlp_ratio, dropout=0.0, activation="gelu", batch_first=True, norm_first=True
        )
        self.blocks = nn.TransformerEncoder(layer, depth, enable_nested_tensor=False)
        self.out_dim = 2 * dim

    def forward(self, images):
        """``images``: ``[B, H, W, 3]`` in ``[0, 1]``."""
        x = images.permute(0, 3, 1, 2) * 2.0 - 1.0
        x = self.embed(x).flatten(2).transpose(1, 2)
        x = torch.cat([self.cls.expand(x.shape[0], -1, -1), x], dim=1) + self.pos
        x = self.blocks(x)
        return torch.cat([x[:, 0], x[:, 1:].mean(dim=1)], dim=-1)


class FaceEncoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.vit = ViT(cfg.image_size, cfg.face_patch, cfg.face_dim, cfg.face_layers, heads=4)
        self.proj = nn.Sequential(nn.LayerNorm(self.vit.out_dim), nn.Linear(self.vit.out_dim, cfg.spk_dim))

    def forward(self, images):
        return self.proj(self.vit(images))


def _inv_softplus(y):
    return y + math.log(-math.expm1(-y))


class AverageF0Net(nn.Module):
    """Face image -> speaker average F0 in Hz (``f0_floor + scale * softplus``)."""

    def __init__(self, cfg, f0_floor=50.0):
        super().__init__()
        self.f0_floor = f0_floor
        self.scale = cfg.af_scale_hz
        self.vit = ViT(cfg.image_size, cfg.af_patch, cfg.af_dim, cfg.af_layers, heads=4)
        self.head = nn.Linear(self.vit.out_dim, 1)
        nn.init.normal_(self.head.weight, std=1e-3)
        nn.init.constant_(self.head.bias, _inv_softplus((cfg.af_init_hz - f0_floor) / self.scale))

    def forward(self, images):
        raw = self.head(self.vit(images)).squeeze(-1)
        return self.f0_floor + self.scale * F.softplus(raw)

"""Building blocks shared by the encoders, the flow and the F0 decoder."""
import math

import torch
from torch import nn
from torch.nn import functional as F

LRELU_SLOPE = 0.1


def get_padding(kernel_size, dilation=1):
    return (kernel_size * dilation - dilation) // 2


class WN(nn.Module):
    """WaveNet-style gated residual stack with optional global conditioning."""

    def __init__(self, hidden, kernel_size, n_layers, gin_channels=0, dilation_rate=1):
        super().__init__()
        self.hidden = hidden
        self.n_layers = n_layers
        self.in_layers = nn.ModuleList()
        self.res_skip_layers = nn.ModuleList()
        if gin_channels:
            self.cond_layer = nn.Conv1d(gin_channels, 2 * hidden * n_layers, 1)
        else:
            self.cond_layer = None
        for i in range(n_layers):
            dilation = dilation_rate**i
            self.in_layers.append(
                nn.Conv1d(hidden, 2 * hidden, kernel_size, dilation=dilation, padding=get_padding(kernel_size, dilation))
            )
            out = 2 * hidden if i < n_layers - 1 else hidden
            self.res_skip_layers.append(nn.Conv1d(hidden, out, 1))

    def forward(self, x, g=None):
        output = torch.zeros_like(x)
        if g is not None and self.cond_layer is not None:
            g = self.cond_layer(g)
        for i in range(self.n_layers):
            x_in = self.in_layers[i](x)
            if g is not None and self.cond_layer is not None:
                off = i * 2 * self.hidden
                x_in = x_in + g[:, off : off + 2 * self.hidden]
            a, b = x_in.chunk(2, dim=1)
            acts = torch.tanh(a) * torch.sigmoid(b)
            res_skip = self.res_skip_layers[i](acts)
            if i < self.n_layers - 1:
                x = x + res_skip[:, : self.hidden]
                output = output + res_skip[:, self.hidden :]
            else:
                output = output + res_skip
        return output


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of a ``[B, C, T]`` tensor."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class RelativeSelfAttention(nn.Module):
    """Multi-head self-attention with clipped relative-position keys and values."""

    def __init__(self, channels, n_heads, window):
        super().__init__()
        assert channels % n_heads == 0
        self.n_heads = n_heads
        self.d = channels // n_heads
        self.window = window
        self.qkv = nn.Conv1d(channels, 3 * channels, 1)
        self.out = nn.Conv1d(channels, channels, 1)
        std = self.d**-0.5
        self.rel_k = nn.Parameter(torch.randn(2 * window + 1, self.d) * std)
        self.rel_v = nn.Parameter(torch.randn(2 * window + 1, self.d) * std)

    def forward(self, x):
        b, c, t = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=1)
        q = q.view(b, self.n_heads, self.d, t).transpose(2, 3)  # b h t d
        k = k.view(b, self.n_heads, self.d, t).transpose(2, 3)
        v = v.view(b, self.n_heads, self.d, t).transpose(2, 3)
        pos = torch.arange(t, device=x.device)
        rel = (pos[None, :] - pos[:, None]).clamp(-self.window, self.window) + self.window
        rk = self.rel_k[rel]  # t t d
        rv = self.rel_v[rel]
        scale = 1.0 / math.sqrt(self.d)
        logits = torch.matmul(q, k.transpose(-1, -2)) + torch.einsum("bhid,ijd->bhij", q, rk)
        attn = torch.softmax(logits * scale, dim=-1)
        y = torch.matmul(attn, v) + torch.einsum("bhij,ijd->bhid", attn, rv)
        y = y.transpose(2, 3).reshape(b, c, t)
        return self.out(y)


class FFN(nn.Module):
    def __init__(self, channels, filter_channels, kernel_size=3):
        super().__init__()
        self.c1 = nn.Conv1d(channels, filter_channels, kernel_size, padding=kernel_size // 2)
        self.c2 = nn.Conv1d(filter_channels, channels, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        return self.c2(F.gelu(self.c1(x)))


class RelativeTransformer(nn.Module):
    """Post-norm transformer encoder over ``[B, C, T]`` sequences."""

    def __init__(self, channels, n_layers, n_heads=2, window=4, ffn_mult=2, kernel_size=3):
        super().__init__()
        self.attn = nn.ModuleList([RelativeSelfAttention(channels, n_heads, window) for _ in range(n_layers)])
        self.norm1 = nn.ModuleList([ChannelLayerNorm(channels) for _ in range(n_layers)])
        self.ffn = nn.ModuleList([FFN(channels, ffn_mult * channels, kernel_size) for _ in range(n_layers)])
        self.norm2 = nn.ModuleList([ChannelLayerNorm(channels) for _ in range(n_layers)])

    def forward(self, x):
        for attn, n1, ffn, n2 in zip(self.attn, self.norm1, self.ffn, self.norm2):
            x = n1(x + attn(x))
            x = n2(x + ffn(x))
        return x

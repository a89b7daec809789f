"""Differentiable torch twin of :func:`hyface.audio_dsp.compute_spectrograms`."""
import torch
from torch import nn

from ..audio_dsp import _hann, mel_filterbank
from ..config import DspConfig


class MelTransform(nn.Module):
    def __init__(self, dsp: DspConfig = DspConfig()):
        super().__init__()
        self.dsp = dsp
        fb = mel_filterbank(dsp.sample_rate, dsp.n_fft, dsp.n_mels, dsp.fmin, dsp.fmax)
        self.register_buffer("fb", torch.tensor(fb, dtype=torch.float32), persistent=False)
        self.register_buffer("window", torch.tensor(_hann(dsp.win, dsp.n_fft), dtype=torch.float32), persistent=False)

    def linear(self, y):
        """``y`` ``[B, N]`` -> magnitude ``[B, n_fft/2+1, N // hop + 1]``."""
        pad = self.dsp.n_fft // 2
        y = torch.nn.functional.pad(y, (pad, pad))
        spec = torch.stft(
            y, self.dsp.n_fft, hop_length=self.dsp.hop, win_length=self.dsp.n_fft,
            window=self.window.to(y.dtype), center=False, return_complex=True,
        )
        return spec.abs()

    def forward(self, y):
        """Log-mel ``[B, n_mels, N // hop + 1]``."""
        mel = torch.matmul(self.fb.to(y.dtype), self.linear(y))
        return torch.log(torch.clamp(mel, min=self.dsp.eps))

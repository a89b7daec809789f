"""The voice-conversion network and operation-level wrappers.

``HYFaceVC`` bundles every generator-side submodule (face encoder,
posterior and prior encoders, flow, NSF decoder, frame-wise F0 decoder).
The discriminator and the average-F0 network are separate modules with
their own optimisers and checkpoints.

The module-level functions (``face_encode``, ``posterior_encode`` ...) are
the numpy-facing API: they take the domain types from ``audio_dsp``,
``dataset`` and ``content``, validate shapes and return domain types with
frame-major ``[n_frames, dim]`` matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..audio_dsp import F0Contour, LinearSpectrogram, SpeakerAvgF0, Waveform
from ..config import DspConfig, ModelConfig
from ..errors import BadImageShape, ConfigMismatch, FrameMismatch, ShapeMismatch
from .discriminator import Discriminator, DiscriminatorFeatures
from .encoders import FrameF0Decoder, PosteriorEncoder, PriorEncoder
from .flow import ResidualCouplingFlow
from .mel import MelTransform
from .nsf import NSFGenerator
from .vit import AverageF0Net, FaceEncoder

SUBMODULES = ("face_encoder", "posterior", "prior", "flow", "decoder", "ff")


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    source: str = "face"


@dataclass
class LatentSequence:
    z: np.ndarray  # [n_frames, latent_dim]
    mean: np.ndarray
    log_std: np.ndarray
    noise: np.ndarray = None


class HYFaceVC(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), dsp: DspConfig = DspConfig()):
        super().__init__()
        if cfg.hop_product != dsp.hop:
            raise ConfigMismatch(f"decoder upsample product {cfg.hop_product} != hop {dsp.hop}")
        self.cfg = cfg
        self.dsp = dsp
        self.face_encoder = FaceEncoder(cfg)
        self.posterior = PosteriorEncoder(dsp.n_fft // 2 + 1, cfg)
        self.prior = PriorEncoder(cfg, dsp.f0_floor)
        self.flow = ResidualCouplingFlow(cfg)
        self.decoder = NSFGenerator(cfg, dsp.sample_rate)
        self.ff = FrameF0Decoder(cfg, dsp.f0_floor)
        self.mel = MelTransform(dsp)


def build_discriminator(cfg: ModelConfig) -> Discriminator:
    return Discriminator(cfg)


def build_af(cfg: ModelConfig, dsp: DspConfig = DspConfig()) -> AverageF0Net:
    return AverageF0Net(cfg, dsp.f0_floor)


# ------------------------------------------------------------------ helpers


def _generator(seed):
    if seed is None:
        return None
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def _images_tensor(images, size):
    if not images:
        raise BadImageShape("at least one face image is required")
    arrs = []
    for im in images:
        px = np.asarray(getattr(im, "pixels", im), dtype=np.float32)
        if px.shape != (size, size, 3):
            raise BadImageShape(f"expected ({size}, {size}, 3), got {px.shape}")
        arrs.append(px)
    return torch.from_numpy(np.stack(arrs))


def _s_tensor(s):
    v = s.vector if isinstance(s, SpeakerEmbedding) else s
    return torch.as_tensor(np.asarray(v, dtype=np.float32)).reshape(1, -1)


def _frames_tensor(m, dim, what):
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2 or m.shape[1] != dim:
        raise ShapeMismatch(f"{what}: expected [n_frames, {dim}], got {m.shape}")
    return torch.from_numpy(m.T.copy()).unsqueeze(0)


def _contour_tensors(f0: F0Contour):
    return (
        torch.from_numpy(f0.values.astype(np.float32)).unsqueeze(0),
        torch.from_numpy(f0.voiced_mask.copy()).unsqueeze(0),
    )


# ------------------------------------------------------------ operations


@torch.no_grad()
def face_encode(model: HYFaceVC, images) -> SpeakerEmbedding:
    """Mean of the per-image embeddings."""
    x = _images_tensor(images, model.cfg.image_size)
    s = model.face_encoder(x)
    return SpeakerEmbedding(s.mean(dim=0).numpy().astype(np.float64))


@torch.no_grad()
def posterior_encode(model: HYFaceVC, x_lin: LinearSpectrogram, s, seed=None, noise=None) -> LatentSequence:
    frames = x_lin.frames if isinstance(x_lin, LinearSpectrogram) else x_lin
    lin = _frames_tensor(frames, model.dsp.n_fft // 2 + 1, "linear spectrogram")
    if noise is None:
        noise = torch.randn(1, model.cfg.latent_dim, lin.shape[-1], generator=_generator(seed))
    else:
        noise = torch.as_tensor(np.asarray(noise, dtype=np.float32).T).unsqueeze(0)
    z, m, logs = model.posterior(lin, _s_tensor(s), noise=noise)
    t = lambda a: a[0].T.numpy().astype(np.float64)
    return LatentSequence(t(z), t(m), t(logs), t(noise))


@torch.no_grad()
def prior_encode(model: HYFaceVC, c, f0: F0Contour, s):
    frames = c.frames if hasattr(c, "frames") else c
    if frames.shape[0] == 0:
        raise FrameMismatch(0, f0.n_frames, what="content frames (empty)")
    if frames.shape[0] != f0.n_frames:
        raise FrameMismatch(frames.shape[0], f0.n_frames, what="content vs f0 frames")
    content = _frames_tensor(frames, model.cfg.content_dim, "content")
    f, v = _contour_tensors(f0)
    m, logs = model.prior(content, f, v, _s_tensor(s))
    return m[0].T.numpy().astype(np.float64), logs[0].T.numpy().astype(np.float64)


@torch.no_grad()
def flow_forward(model: HYFaceVC, z, s):
    zt = _frames_tensor(z, model.cfg.latent_dim, "latent")
    zp, ld = model.flow(zt, _s_tensor(s))
    return zp[0].T.numpy().astype(np.float64), float(ld[0])


@torch.no_grad()
def flow_inverse(model: HYFaceVC, z_prime, s):
    zt = _frames_tensor(z_prime, model.cfg.latent_dim, "latent")
    return model.flow.inverse(zt, _s_tensor(s))[0].T.numpy().astype(np.float64)


@torch.no_grad()
def decode_waveform(model: HYFaceVC, z, f0: F0Contour, s, seed=None) -> Waveform:
    zt = _frames_tensor(z, model.cfg.latent_dim, "latent")
    if zt.shape[-1] != f0.n_frames:
        raise FrameMismatch(zt.shape[-1], f0.n_frames, what="latent vs f0 frames")
    f, _ = _contour_tensors(f0)
    y = model.decoder(zt, f, _s_tensor(s), generator=_generator(seed))
    return Waveform(y[0, 0].numpy().astype(np.float64), model.dsp.sample_rate)


@torch.no_grad()
def nsf_source(model: HYFaceVC, f0: F0Contour, seed=None) -> np.ndarray:
    """The raw excitation signal, with the filter network bypassed."""
    f, _ = _contour_tensors(f0)
    return model.decoder.source(f, _generator(seed))[0, 0].numpy().astype(np.float64)


def discriminate(disc: Discriminator, wav) -> DiscriminatorFeatures:
    x = wav.samples if isinstance(wav, Waveform) else wav
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x, dtype=np.float32))
    if x.numel() == 0:
        raise ShapeMismatch("empty waveform")
    return disc(x.reshape(1, 1, -1))


@torch.no_grad()
def ff_predict(model: HYFaceVC, f0_avg, c, s, source_mask=None) -> F0Contour:
    """Frame-wise F0 from a speaker average F0, content and speaker embedding.

    With ``source_mask`` (or ``ff_source_mask`` in the config, given a mask)
    the voicing decision is taken from the source instead of predicted.
    """
    avg = f0_avg.avg_f0 if isinstance(f0_avg, SpeakerAvgF0) else float(f0_avg)
    frames = c.frames if hasattr(c, "frames") else c
    if frames.shape[0] == 0:
        raise FrameMismatch(0, 1, what="content frames (empty)")
    content = _frames_tensor(frames, model.cfg.content_dim, "content")
    _, pitch, prob = model.ff(torch.tensor([avg], dtype=torch.float32), content, _s_tensor(s))
    pitch = pitch[0].numpy().astype(np.float64)
    voiced = prob[0].numpy() > 0.5
    if source_mask is not None:
        source_mask = np.asarray(source_mask, dtype=bool)
        if source_mask.shape[0] != pitch.shape[0]:
            raise FrameMismatch(source_mask.shape[0], pitch.shape[0], what="source voicing mask")
        voiced = source_mask
    return F0Contour(np.where(voiced, pitch, 0.0), voiced)


@torch.no_grad()
def af_predict(af: AverageF0Net, images, image_size: int = 224) -> float:
    """Mean of the per-image average-F0 predictions, in Hz."""
    x = _images_tensor(images, image_size)
    return float(af(x).mean())

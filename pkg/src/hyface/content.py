"""Frame-aligned linguistic content features.

Two providers share one interface, ``embed_content(wav, utt_id=None)``:

``ToyContentProvider``
    Training-free fallback.  13 cepstra (DCT of the log-mel frames) plus
    their deltas, normalised per utterance to zero mean / unit variance, then
    projected to ``content_dim`` with a frozen orthonormal matrix seeded from
    the provider id.  Per-utterance normalisation removes global gain and
    most static timbre, leaving the frame-to-frame spectral movement.

``FileContentProvider``
    Reads features computed elsewhere (e.g. by an SSL model) from
    ``<dir>/<utt_id>.bin``.

Feature file layout (little-endian)::

    offset 0  2 bytes   magic  b"HF"
    offset 2  uint16    version (=1)
    offset 4  uint16    n_frames
    offset 6  uint16    dim
    offset 8  float32[n_frames * dim], row-major
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_dsp import Waveform, compute_spectrograms, n_frames_for
from .config import DspConfig
from .errors import FrameMismatch, ParseError, ProviderUnavailable, SampleRateMismatch

MAGIC = b"HF"
FILE_VERSION = 1
HEADER = struct.Struct("<2sHHH")
MAX_FRAME_SLACK = 2


@dataclass
class ContentEmbedding:
    frames: np.ndarray  # [n_frames, content_dim]
    provider_id: str
    interpolated: bool = False

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def content_dim(self):
        return self.frames.shape[1]


def write_feature_file(path, array):
    array = np.asarray(array, dtype="<f4")
    if array.ndim == 1:
        array = array[None, :]
    n, dim = array.shape
    if n > 0xFFFF or dim > 0xFFFF:
        raise ValueError("feature file limited to 65535 frames and 65535 dims")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FILE_VERSION, n, dim))
        fh.write(np.ascontiguousarray(array).tobytes())


def read_feature_file(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise ProviderUnavailable(f"feature file not found: {path}") from None
    if len(blob) < HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, version, n, dim = HEADER.unpack_from(blob)
    if magic != MAGIC or version != FILE_VERSION:
        raise ParseError(f"{path}: bad magic/version {magic!r}/{version}")
    body = blob[HEADER.size:]
    if len(body) != 4 * n * dim:
        raise ParseError(f"{path}: expected {4 * n * dim} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float32)


def _nearest_resample(frames, n_out):
    n_in = frames.shape[0]
    if n_out == 1 or n_in == 1:
        idx = np.zeros(n_out, dtype=int)
    else:
        idx = np.rint(np.arange(n_out) * (n_in - 1) / (n_out - 1)).astype(int)
    return frames[idx]


def load_precomputed(feature_path, expected_frames: int, provider_id: str = "file") -> ContentEmbedding:
    """Load a feature file and reconcile its length with the DSP frame grid.

    Off by at most two frames: nearest-frame resampling onto
    ``expected_frames`` (``interpolated`` is set).  Otherwise FrameMismatch.
    """
    frames = read_feature_file(feature_path)
    got = frames.shape[0]
    if got == expected_frames:
        return ContentEmbedding(frames, provider_id)
    if got == 0 or abs(got - expected_frames) > MAX_FRAME_SLACK:
        raise FrameMismatch(got, expected_frames, what=str(feature_path))
    return ContentEmbedding(_nearest_resample(frames, expected_frames), provider_id, interpolated=True)


def _seed_from(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def frozen_projection(provider_id: str, d_in: int, d_out: int) -> np.ndarray:
    """Orthonormal ``[d_in, d_out]`` map (orthonormal rows or columns, whichever fits)."""
    rng = np.random.default_rng(_seed_from(provider_id))
    a = rng.standard_normal((max(d_in, d_out), min(d_in, d_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))[None, :]
    return (q if d_in >= d_out else q.T).astype(np.float64)


def deltas(x: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas along axis 0 with edge replication."""
    n = x.shape[0]
    pad = np.pad(x, ((width, width), (0, 0)), mode="edge")
    num = sum(k * (pad[width + k : width + k + n] - pad[width - k : width - k + n]) for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


class ToyContentProvider:
    n_cepstra = 13

    def __init__(self, content_dim: int = 64, provider_id: str = "toy-mfcc-v1", dsp: DspConfig = DspConfig()):
        self.content_dim = content_dim
        self.provider_id = provider_id
        self.dsp = dsp
        self._proj = frozen_projection(provider_id, 2 * self.n_cepstra, content_dim)

    def features_from_mel(self, log_mel: np.ndarray) -> np.ndarray:
        cep = dct(log_mel, type=2, norm="ortho", axis=1)[:, : self.n_cepstra]
        feats = np.concatenate([cep, deltas(cep)], axis=1)
        mu = feats.mean(axis=0, keepdims=True)
        sd = feats.std(axis=0, keepdims=True)
        feats = (feats - mu) / np.maximum(sd, 1e-5)
        return feats @ self._proj

    def embed_content(self, wav: Waveform, utt_id=None) -> ContentEmbedding:
        if wav.sample_rate != self.dsp.sample_rate:
            raise SampleRateMismatch(f"got {wav.sample_rate} Hz, expected {self.dsp.sample_rate} Hz")
        _, mel = compute_spectrograms(wav, self.dsp)
        return ContentEmbedding(self.features_from_mel(mel.frames).astype(np.float32), self.provider_id)


class FileContentProvider:
    """Externally computed features, projected to ``content_dim`` when needed."""

    def __init__(self, root, content_dim: int = 256, provider_id: str | None = None, dsp: DspConfig = DspConfig()):
        self.root = Path(root)
        self.content_dim = content_dim
        self.provider_id = provider_id or f"file:{self.root.name}"
        self.dsp = dsp

    def path_for(self, utt_id: str) -> Path:
        return self.root / f"{utt_id}.bin"

    def embed_content(self, wav: Waveform, utt_id=None) -> ContentEmbedding:
        if utt_id is None:
            raise ProviderUnavailable("file-backed content provider needs an utterance id")
        if wav.sample_rate != self.dsp.sample_rate:
            raise SampleRateMismatch(f"got {wav.sample_rate} Hz, expected {self.dsp.sample_rate} Hz")
        emb = load_precomputed(self.path_for(utt_id), n_frames_for(len(wav), self.dsp.hop), self.provider_id)
        if emb.content_dim != self.content_dim:
            proj = frozen_projection(f"{self.provider_id}/{emb.content_dim}", emb.content_dim, self.content_dim)
            emb.frames = (emb.frames @ proj).astype(np.float32)
        return emb


def make_provider(kind: str, content_dim: int, dsp: DspConfig = DspConfig()):
    """``"toy"`` or ``"file:<dir>"``, as accepted by the ``--content`` flag."""
    if kind == "toy":
        return ToyContentProvider(content_dim, dsp=dsp)
    if kind.startswith("file:"):
        return FileContentProvider(kind[5:], content_dim, dsp=dsp)
    raise ProviderUnavailable(f"unknown content provider {kind!r}")

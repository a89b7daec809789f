"""Signal-processing front-end: spectrograms, YIN F0 tracking and F0 statistics.

All functions are pure and deterministic.  Framing is centre-padded with
zeros by ``n_fft // 2`` so that an ``N``-sample signal yields
``N // hop + 1`` frames for both the spectrograms and the F0 contour.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, welch

from . import _kernels
from .config import DspConfig
from .errors import (
    AudioTooShort,
    EmptyInput,
    NoVoicedFrames,
    SampleRateMismatch,
    UnsupportedAudioFormat,
)

# Published gender baselines (per-speaker F0 stdv, LRS3 scale), echoed in reports.
REFERENCE_STDV_MALE_HZ = 29.18
REFERENCE_STDV_FEMALE_HZ = 37.50


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass
class LinearSpectrogram:
    frames: np.ndarray  # [n_frames, n_fft // 2 + 1]
    hop_length: int
    win_length: int
    n_fft: int

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [n_frames, n_mels], log-compressed
    n_mels: int
    fmin: float
    fmax: float

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class F0Contour:
    values: np.ndarray
    voiced_mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.voiced_mask is None:
            self.voiced_mask = self.values > 0
        self.voiced_mask = np.asarray(self.voiced_mask, dtype=bool).reshape(-1)
        if self.voiced_mask.shape != self.values.shape:
            raise ValueError("voiced_mask and values differ in length")
        # 0 Hz is the unvoiced code; keep the two views consistent
        self.values = np.where(self.voiced_mask, self.values, 0.0)
        if np.any(self.values[self.voiced_mask] <= 0):
            raise ValueError("voiced frames must carry a positive F0")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return len(self)

    def voiced_values(self):
        return self.values[self.voiced_mask]


@dataclass
class SpeakerAvgF0:
    speaker_id: str
    avg_f0: float
    n_voiced_frames: int
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------- io


def read_wav(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV file."""
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except (ValueError, OSError) as e:
        raise UnsupportedAudioFormat(f"{path}: {e}") from None
    if data.ndim != 1:
        raise UnsupportedAudioFormat(f"{path}: expected mono, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedAudioFormat(f"{path}: unsupported sample type {data.dtype}")
    return Waveform(samples, int(sr))


def write_wav(path, wav: Waveform, pcm16: bool = True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.clip(wav.samples, -1.0, 1.0)
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, wav.sample_rate, data)


# ------------------------------------------------------------------- framing


def n_frames_for(n_samples: int, hop: int) -> int:
    return n_samples // hop + 1


def frame_signal(x: np.ndarray, frame_length: int, hop: int, pad: int) -> np.ndarray:
    """Zero-pad by ``pad`` on both sides and cut ``n // hop + 1`` frames."""
    n = n_frames_for(x.shape[0], hop)
    padded = np.pad(x, (pad, pad + frame_length))
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n)[:, None]
    return padded[idx]


def interior_frames(n_samples: int, config: DspConfig) -> np.ndarray:
    """Indices of frames whose analysis window lies fully inside the signal."""
    half = config.win // 2
    centers = np.arange(n_frames_for(n_samples, config.hop)) * config.hop
    return np.flatnonzero((centers - half >= 0) & (centers + half <= n_samples))


def _check(wav: Waveform, config: DspConfig):
    if wav.sample_rate != config.sample_rate:
        raise SampleRateMismatch(f"got {wav.sample_rate} Hz, expected {config.sample_rate} Hz")
    if len(wav) < config.win:
        raise AudioTooShort(f"{len(wav)} samples < window length {config.win}")


# ---------------------------------------------------------------- spectrogram


def hz_to_mel(f):
    """Slaney mel scale (linear below 1 kHz, logarithmic above)."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = f / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep, mels)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


@functools.lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Area-normalised triangular mel filters, shape ``[n_mels, n_fft // 2 + 1]``."""
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_pts[2:] - mel_pts[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


@functools.lru_cache(maxsize=4)
def _hann(win: int, n_fft: int) -> np.ndarray:
    w = get_window("hann", win, fftbins=True)
    left = (n_fft - win) // 2
    w = np.pad(w, (left, n_fft - win - left))
    w.setflags(write=False)
    return w


def linear_spectrogram(wav: Waveform, config: DspConfig = DspConfig()) -> LinearSpectrogram:
    _check(wav, config)
    frames = frame_signal(wav.samples, config.n_fft, config.hop, config.n_fft // 2)
    mag = np.abs(np.fft.rfft(frames * _hann(config.win, config.n_fft), axis=1))
    return LinearSpectrogram(mag, config.hop, config.win, config.n_fft)


def mel_from_linear(lin: LinearSpectrogram, config: DspConfig = DspConfig()) -> MelSpectrogram:
    fb = mel_filterbank(config.sample_rate, config.n_fft, config.n_mels, config.fmin, config.fmax)
    mel = np.log(np.maximum(lin.frames @ fb.T, config.eps))
    return MelSpectrogram(mel, config.n_mels, config.fmin, config.fmax)


def compute_spectrograms(wav: Waveform, config: DspConfig = DspConfig()):
    """Return ``(LinearSpectrogram, MelSpectrogram)`` sharing one frame grid."""
    lin = linear_spectrogram(wav, config)
    return lin, mel_from_linear(lin, config)


# ------------------------------------------------------------------------ F0


def extract_f0(wav: Waveform, config: DspConfig = DspConfig()) -> F0Contour:
    """YIN F0 tracker on the spectrogram frame grid.

    Each frame is ``win`` samples centred on ``i * hop``; the lag search
    covers ``[sr / f0_ceil, sr / f0_floor]`` and the integration window is
    ``win - max_lag`` samples.  A frame is voiced when the cumulative-mean
    normalised difference dips below ``yin_threshold``.
    """
    _check(wav, config)
    sr = config.sample_rate
    tau_min = max(2, int(np.floor(sr / config.f0_ceil)))
    tau_max = int(np.ceil(sr / config.f0_floor))
    frames = frame_signal(wav.samples, config.win, config.hop, config.win // 2)
    f0, voiced, _ = _kernels.yin_track(
        np.ascontiguousarray(frames), tau_min, tau_max, config.yin_threshold, float(sr), 1e-10
    )
    voiced &= (f0 >= config.f0_floor) & (f0 <= config.f0_ceil)
    return F0Contour(np.where(voiced, f0, 0.0), voiced)


def compute_speaker_avg_f0(contours, speaker_id: str = "") -> SpeakerAvgF0:
    """Pooled mean over the voiced frames of every contour."""
    total = 0.0
    count = 0
    for c in contours:
        v = c.voiced_values()
        total += float(np.sum(v))
        count += int(v.shape[0])
    if count == 0:
        raise NoVoicedFrames(f"speaker {speaker_id!r} has no voiced frames", speaker_id)
    return SpeakerAvgF0(speaker_id, total / count, count)


def f0_statistics(avg_f0s):
    """Mean and population standard deviation of per-speaker average F0."""
    vals = np.array([a.avg_f0 if isinstance(a, SpeakerAvgF0) else float(a) for a in avg_f0s])
    if vals.size == 0:
        raise EmptyInput("f0_statistics needs at least one speaker")
    return float(vals.mean()), float(vals.std(ddof=0))


def voiced_mean_f0(wav: Waveform, config: DspConfig = DspConfig()) -> float:
    c = extract_f0(wav, config)
    v = c.voiced_values()
    if v.size == 0:
        raise NoVoicedFrames("no voiced frames in waveform")
    return float(v.mean())


def spectral_flatness(x: np.ndarray, sample_rate: int = 16000, nperseg: int = 1024) -> float:
    """Wiener entropy of the Welch power spectrum (1.0 for white noise)."""
    _, pxx = welch(np.asarray(x, dtype=np.float64), fs=sample_rate, nperseg=nperseg)
    pxx = pxx[1:-1]
    pxx = np.maximum(pxx, 1e-30)
    return float(np.exp(np.mean(np.log(pxx))) / np.mean(pxx))


def cents(f_est, f_ref):
    return 1200.0 * np.log2(np.asarray(f_est, dtype=np.float64) / np.asarray(f_ref, dtype=np.float64))

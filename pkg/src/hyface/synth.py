"""Synthetic speakers, utterances and faces for fixtures and the self-test.

Voices are glottal-pulse-like harmonic sources (intonation + vibrato)
shaped by per-syllable vowel formants scaled by a speaker-specific vocal
tract factor, separated by short pauses.  Faces are 224x224 RGB images
whose mean intensity encodes the speaker's pitch linearly:
``0.2 + 0.6 * (f0 - 100) / 200`` for ``f0`` in [100, 300] Hz.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio_dsp import Waveform, write_wav
from .dataset import IMAGE_SIZE, save_face_image

VOWELS = np.array([[730, 1090, 2440], [270, 2290, 3010], [300, 870, 2240], [530, 1840, 2480], [570, 840, 2410]], float)


@dataclass
class SpeakerSpec:
    speaker_id: str
    f0: float
    tract: float = 1.0
    gender: str = "unknown"
    split: str = "trainval"


def _resonator(x, freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    b = [1.0 - r]
    return lfilter(b, a, x)


def harmonic_tone(f0_track, sr=16000, n_harmonics=None, tilt=1.0):
    """Sum of harmonics of a sample-wise F0 track with ``1/k**tilt`` amplitudes."""
    f0_track = np.asarray(f0_track, dtype=np.float64)
    phase = 2 * np.pi * np.cumsum(f0_track) / sr
    top = n_harmonics or int(sr / 2 / max(f0_track.max(), 1.0))
    out = np.zeros_like(f0_track)
    for k in range(1, top + 1):
        alive = (k * f0_track) < sr / 2
        out += alive * np.sin(k * phase) / k**tilt
    return out


def synth_utterance(spec: SpeakerSpec, seed: int, duration: float = 2.0, sr: int = 16000) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(duration * sr)
    f0 = np.zeros(n)
    env = np.zeros(n)
    formants = np.zeros((n, 3))
    pos = int(rng.uniform(0.03, 0.08) * sr)
    while pos < n - int(0.12 * sr):
        length = min(int(rng.uniform(0.25, 0.45) * sr), n - pos - int(0.03 * sr))
        seg = slice(pos, pos + length)
        tt = np.arange(length) / sr
        glide = rng.uniform(-0.08, 0.08)
        contour = spec.f0 * (1 + glide * (tt / max(tt[-1], 1e-3) - 0.5)) * (1 + 0.01 * np.sin(2 * np.pi * 5.5 * tt))
        f0[seg] = contour
        ramp = np.minimum(1.0, np.minimum(tt, tt[-1] - tt) / 0.02)
        env[seg] = ramp * rng.uniform(0.6, 1.0)
        formants[seg] = VOWELS[rng.integers(len(VOWELS))] * spec.tract
        pos += length + int(rng.uniform(0.04, 0.1) * sr)
    src = harmonic_tone(np.where(f0 > 0, f0, spec.f0), sr, tilt=1.0) * env
    out = np.zeros(n)
    # formants are piecewise constant; filter each syllable separately
    edges = np.flatnonzero(np.diff(np.r_[0, (env > 0).astype(int), 0]))
    for a, b in zip(edges[::2], edges[1::2]):
        piece = src[a:b]
        y = np.zeros_like(piece)
        for j, (fq, bw) in enumerate(zip(formants[a], (80, 100, 140))):
            y += _resonator(piece, fq, bw, sr) * (1.0, 0.6, 0.3)[j]
        out[a:b] = y
    out += 1e-3 * rng.standard_normal(n)
    out *= 0.5 / max(np.abs(out).max(), 1e-9)
    return Waveform(out, sr)


def intensity_for_f0(f0):
    return 0.2 + 0.6 * (np.asarray(f0, dtype=np.float64) - 100.0) / 200.0


def f0_for_intensity(level):
    return 100.0 + (np.asarray(level, dtype=np.float64) - 0.2) * 200.0 / 0.6


def synth_face(f0: float, seed: int, texture: float = 0.08) -> np.ndarray:
    """Face-like image whose mean intensity is ``intensity_for_f0(f0)``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE] / IMAGE_SIZE
    cx, cy = rng.uniform(0.45, 0.55, size=2)
    blob = np.exp(-(((xx - cx) / 0.25) ** 2 + ((yy - cy) / 0.32) ** 2))
    pattern = np.stack([blob * rng.uniform(0.5, 1.5) for _ in range(3)], axis=-1)
    pattern += texture * rng.standard_normal((IMAGE_SIZE, IMAGE_SIZE, 3))
    pattern -= pattern.mean()
    img = intensity_for_f0(f0) + 0.1 * pattern / max(np.abs(pattern).max(), 1e-9)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def write_corpus(root, speakers, n_utts: int = 5, n_faces: int = 4, duration: float = 2.0, seed: int = 0,
                 image_ext: str = ".npy"):
    """Write a ``flat``-layout corpus and return ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta = {}
    for si, spec in enumerate(speakers):
        d = root / spec.speaker_id
        for u in range(n_utts):
            write_wav(d / f"utt{u:02d}.wav", synth_utterance(spec, seed * 10007 + si * 101 + u, duration))
        for k in range(n_faces):
            save_face_image(d / "faces" / f"img{k:02d}{image_ext}", synth_face(spec.f0, seed * 10007 + si * 101 + 50 + k))
        meta[spec.speaker_id] = {"gender": spec.gender, "split": spec.split}
    (root / "speakers.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return root


def face_pitch_corpus(n_speakers: int, faces_per_speaker: int, seed: int):
    """Synthetic AF corpus: ``(images [N, 224, 224, 3], targets [N], speaker index [N])``."""
    rng = np.random.default_rng(seed)
    f0s = rng.uniform(100.0, 300.0, size=n_speakers)
    imgs, tgts, spk = [], [], []
    for i, f in enumerate(f0s):
        for k in range(faces_per_speaker):
            imgs.append(synth_face(f, int(rng.integers(2**31))))
            tgts.append(f)
            spk.append(i)
    return np.stack(imgs), np.asarray(tgts, dtype=np.float32), np.asarray(spk)

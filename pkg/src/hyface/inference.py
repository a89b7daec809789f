"""Face-conditioned conversion: source audio + target face(s) -> waveform.

Pipeline per conversion:

1. content features of the source utterance;
2. speaker embedding = mean face-encoder output over the target faces;
3. target average F0 from the AF network (or an explicit override);
4. frame-wise F0 from the FF decoder;
5. prior sample (temperature-scaled) -> inverse flow -> NSF decoder.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .audio_dsp import Waveform, n_frames_for, read_wav, write_wav
from .config import RunConfig, config_to_dict
from .content import make_provider
from .dataset import FeatureCache, load_face_image
from .errors import BadImageShape, ConfigMismatch, UnknownSpeaker
from .model import HYFaceVC, build_af
from .model.encoders import f0_features  # noqa: F401  (re-exported for callers)
from .model.hyface import _images_tensor

DEFAULT_TEMPERATURE = 0.7


@dataclass
class ConversionResult:
    wav: Waveform
    f0_avg: float
    f0: np.ndarray
    voiced: np.ndarray


@dataclass
class ConversionRecord:
    source_id: str
    target_id: str
    trial: int
    source_utt: str
    f0_avg: float
    face_ids: list
    wav_path: str
    seed: int
    f0_avg_source: str = "af"
    run_hash: str = ""

    def to_dict(self):
        return asdict(self)


def write_results(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_results(path):
    with open(path) as fh:
        return [ConversionRecord(**json.loads(ln)) for ln in fh if ln.strip()]


def _derive_seed(*parts) -> int:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") & (2**62 - 1)


class Converter:
    """Frozen VC + AF models and a content provider."""

    def __init__(self, vc: HYFaceVC, af, run: RunConfig, provider=None, temperature=DEFAULT_TEMPERATURE,
                 source_mask: bool | None = None, run_hash: str = ""):
        self.vc = vc.eval()
        self.af = af.eval() if af is not None else None
        self.run = run
        self.dsp = run.dsp
        self.provider = provider or make_provider("toy", run.model.content_dim, run.dsp)
        self.temperature = temperature
        self.source_mask = run.model.ff_source_mask if source_mask is None else source_mask
        self.run_hash = run_hash or run.content_hash()

    @classmethod
    def from_checkpoints(cls, vc_ckpt, af_ckpt=None, content: str = "toy", **kw):
        vc_meta = ckpt.read_meta(vc_ckpt)
        run = RunConfig.from_dict(vc_meta["run_config"])
        vc = HYFaceVC(run.model, run.dsp)
        for name in ("face_encoder", "posterior", "prior", "flow", "decoder", "ff"):
            getattr(vc, name).load_state_dict(ckpt.load_params(vc_ckpt, name))
        af = None
        if af_ckpt is not None:
            af_meta = ckpt.read_meta(af_ckpt)
            af_run = RunConfig.from_dict(af_meta["run_config"])
            if config_to_dict(af_run.dsp) != config_to_dict(run.dsp):
                raise ConfigMismatch("VC and AF checkpoints were trained with different DSP configs")
            af = build_af(af_run.model, af_run.dsp)
            af.load_state_dict(ckpt.load_params(af_ckpt, "af"))
        provider = make_provider(content, run.model.content_dim, run.dsp)
        h = hashlib.sha256((vc_meta["run_hash"] + (ckpt.read_meta(af_ckpt)["run_hash"] if af_ckpt else "")).encode())
        return cls(vc, af, run, provider, run_hash=h.hexdigest()[:16], **kw)

    @torch.no_grad()
    def convert(self, source: Waveform, target_faces, f0_avg_override=None, seed: int = 0,
                utt_id=None, temperature=None) -> ConversionResult:
        if not target_faces:
            raise BadImageShape("at least one target face image is required")
        images = _images_tensor(target_faces, self.run.model.image_size)
        if f0_avg_override is None and self.af is None:
            raise ConfigMismatch("no AF checkpoint loaded and no f0_avg override given")
        temperature = self.temperature if temperature is None else temperature
        content = self.provider.embed_content(source, utt_id=utt_id)
        n = n_frames_for(len(source), self.dsp.hop)
        c = torch.from_numpy(content.frames.T.copy())[None]
        s = self.vc.face_encoder(images).mean(dim=0, keepdim=True)
        if f0_avg_override is not None:
            f0_avg = float(f0_avg_override)
        else:
            f0_avg = float(self.af(images).mean())
        _, pitch, prob = self.vc.ff(torch.tensor([f0_avg]), c, s)
        voiced = prob > 0.5
        if self.source_mask:
            from .audio_dsp import extract_f0

            voiced = torch.from_numpy(extract_f0(source, self.dsp).voiced_mask)[None]
        f0 = torch.where(voiced, pitch, torch.zeros_like(pitch))
        m_p, logs_p = self.vc.prior(c, f0, voiced, s)
        gen = torch.Generator()
        gen.manual_seed(int(seed))
        z_p = m_p + torch.randn(m_p.shape, generator=gen) * torch.exp(logs_p) * temperature
        z = self.vc.flow.inverse(z_p, s)
        y = self.vc.decoder(z, f0, s, generator=gen)[0, 0]
        assert y.shape[0] == n * self.dsp.hop
        return ConversionResult(
            Waveform(y.numpy().astype(np.float64), self.dsp.sample_rate), f0_avg,
            f0[0].numpy().astype(np.float64), voiced[0].numpy(),
        )


def convert(source: Waveform, target_faces, vc_ckpt, af_ckpt=None, overrides=None) -> Waveform:
    """Checkpoint-path convenience wrapper around :meth:`Converter.convert`.

    ``overrides`` may hold ``f0_avg``, ``seed``, ``temperature``, ``content``.
    """
    if not target_faces:
        raise BadImageShape("at least one target face image is required")
    overrides = dict(overrides or {})
    conv = Converter.from_checkpoints(vc_ckpt, af_ckpt, content=overrides.pop("content", "toy"))
    return conv.convert(
        source, target_faces, f0_avg_override=overrides.get("f0_avg"), seed=overrides.get("seed", 0),
        temperature=overrides.get("temperature"),
    ).wav


def evaluation_pairs(targets, sources_for, n_sources: int = 10, n_trials: int = 10, seed: int = 0):
    """``n_sources`` random sources per target, repeated for ``n_trials`` trials.

    ``sources_for(target_id)`` returns the candidate source speakers.  Output
    is a list of ``(source_id, target_id, trial)``.
    """
    pairs = []
    for trial in range(n_trials):
        for t in targets:
            cands = sorted(sources_for(t))
            rng = np.random.default_rng(_derive_seed(seed, t, trial))
            k = min(n_sources, len(cands))
            for i in rng.choice(len(cands), size=k, replace=False):
                pairs.append((cands[i], t, trial))
    return pairs


def convert_batch(pairs, cache: FeatureCache, converter: Converter, out_dir, seed: int = 0,
                  f0_avg_override=None, utt_splits=None, synthesize: bool = True):
    """Convert every ``(source_id, target_id[, trial])`` pair.

    For each pair the source utterance and one target face are drawn from a
    per-pair RNG stream seeded by ``(seed, source, target, trial)``; WAVs go
    to ``<out_dir>/<target_id>/<source_id>_<trial>.wav``.  Duplicate pairs
    yield duplicate records.
    """
    out_dir = Path(out_dir)
    records = []
    for pair in pairs:
        source_id, target_id, trial = (tuple(pair) + (0,))[:3]
        for spk in (source_id, target_id):
            if spk not in cache.speakers:
                raise UnknownSpeaker(spk)
        pair_seed = _derive_seed(seed, source_id, target_id, trial)
        rng = np.random.default_rng(pair_seed)
        utts = [e.utt_id for e in cache.speakers[source_id].entries
                if utt_splits is None or e.split in utt_splits]
        if not utts:
            raise UnknownSpeaker(source_id)
        utt = utts[int(rng.integers(len(utts)))]
        faces = cache.speakers[target_id].face_paths()
        if not faces:
            raise BadImageShape(f"speaker {target_id!r} has no face images")
        face = faces[int(rng.integers(len(faces)))]
        wav_path = out_dir / target_id / f"{source_id}_{trial}.wav"
        if synthesize:
            src = Waveform(cache.utterances[utt].wav.astype(np.float64), cache.dsp.sample_rate)
            res = converter.convert(src, [load_face_image(face)], f0_avg_override=f0_avg_override,
                                    seed=pair_seed, utt_id=utt)
            write_wav(wav_path, res.wav)
            f0_avg = res.f0_avg
        else:
            f0_avg = float(f0_avg_override) if f0_avg_override is not None else float("nan")
        records.append(ConversionRecord(
            source_id=source_id, target_id=target_id, trial=int(trial), source_utt=utt, f0_avg=f0_avg,
            face_ids=[str(face)], wav_path=str(wav_path), seed=pair_seed,
            f0_avg_source="override" if f0_avg_override is not None else "af", run_hash=converter.run_hash,
        ))
    return records


def load_record_audio(record: ConversionRecord) -> Waveform:
    return read_wav(record.wav_path)

"""Corpus manifests, the feature cache and deterministic training batches.

Supported corpus layouts
------------------------
``flat``::

    <root>/speakers.json              optional {speaker: {"gender": "M", "split": "trainval"}}
    <root>/<speaker>/*.wav
    <root>/<speaker>/faces/*.png|jpg|npy
    <root>/<speaker>/frontal.json     optional {"<image file name>": true|false}

``lrs3`` (pre-extracted frames, one directory per utterance)::

    <root>/speakers.json              optional, gender only
    <root>/{pretrain,trainval,test}/<speaker>/<utt>.wav
    <root>/{pretrain,trainval,test}/<speaker>/<utt>/*.png|jpg|npy
    <root>/{pretrain,trainval,test}/<speaker>/frontal.json   {"<utt>/<image>": bool}

Cache directory layout (format version ``CACHE_VERSION``)::

    <cache>/index.jsonl               one committed entry per line
    <cache>/objects/<key>/<name>.bin  raw little-endian float32 arrays
    <cache>/speakers.json             per-speaker average F0

``key`` is the SHA-256 of the WAV bytes, the DSP config and the content
provider id, so any change of input or config is a cache miss.
"""
from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .audio_dsp import (
    F0Contour,
    SpeakerAvgF0,
    Waveform,
    compute_spectrograms,
    compute_speaker_avg_f0,
    extract_f0,
    read_wav,
)
from .config import DspConfig, config_to_dict
from .errors import BadImageShape, DecodeError, EmptyCorpus, MissingSplit, NoVoicedFrames

log = logging.getLogger(__name__)

SPLITS = ("pretrain", "trainval", "test")
GENDERS = ("M", "F", "unknown")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".npy")
IMAGE_SIZE = 224
CACHE_VERSION = 1


@dataclass
class ManifestEntry:
    speaker_id: str
    wav_path: str
    image_paths: list
    split: str = "trainval"
    frontal_flags: list = None
    gender: str = "unknown"

    def __post_init__(self):
        if self.frontal_flags is None:
            self.frontal_flags = [True] * len(self.image_paths)
        if len(self.frontal_flags) != len(self.image_paths):
            raise ValueError("frontal_flags must parallel image_paths")
        if self.split not in SPLITS:
            raise MissingSplit(f"unknown split {self.split!r}")
        if self.gender not in GENDERS:
            raise ValueError(f"unknown gender {self.gender!r}")

    @property
    def utt_id(self):
        return f"{self.speaker_id}/{Path(self.wav_path).stem}"

    def frontal_images(self):
        return [p for p, ok in zip(self.image_paths, self.frontal_flags) if ok]


def write_manifest(path, entries):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")


def read_manifest(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(ManifestEntry(**json.loads(line)))
    return out


def _images_in(d: Path):
    if not d.is_dir():
        return []
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _read_json(path: Path, default):
    if not path.exists():
        return default
    with open(path) as fh:
        return json.load(fh)


def build_manifest(corpus_root, layout: str = "flat", frontal_only: bool = False):
    """Scan ``corpus_root`` and return one ManifestEntry per utterance.

    Entries are sorted by (split, speaker, wav path).  With ``frontal_only``
    entries that have no frontal image are dropped.
    """
    root = Path(corpus_root)
    if not root.is_dir():
        raise EmptyCorpus(f"{root} is not a directory")
    meta = _read_json(root / "speakers.json", {})
    entries = []
    if layout == "flat":
        for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            spk = spk_dir.name
            info = meta.get(spk, {})
            faces = _images_in(spk_dir / "faces")
            flags_map = _read_json(spk_dir / "frontal.json", {})
            flags = [bool(flags_map.get(p.name, True)) for p in faces]
            for wav in sorted(spk_dir.glob("*.wav")):
                entries.append(
                    ManifestEntry(
                        speaker_id=spk,
                        wav_path=str(wav),
                        image_paths=[str(p) for p in faces],
                        split=info.get("split", "trainval"),
                        frontal_flags=list(flags),
                        gender=info.get("gender", "unknown"),
                    )
                )
    elif layout == "lrs3":
        present = [s for s in SPLITS if (root / s).is_dir()]
        if not present:
            raise MissingSplit(f"{root} has none of the split directories {SPLITS}")
        for split in present:
            for spk_dir in sorted(p for p in (root / split).iterdir() if p.is_dir()):
                spk = spk_dir.name
                flags_map = _read_json(spk_dir / "frontal.json", {})
                for wav in sorted(spk_dir.glob("*.wav")):
                    faces = _images_in(spk_dir / wav.stem)
                    flags = [bool(flags_map.get(f"{wav.stem}/{p.name}", True)) for p in faces]
                    entries.append(
                        ManifestEntry(
                            speaker_id=spk,
                            wav_path=str(wav),
                            image_paths=[str(p) for p in faces],
                            split=split,
                            frontal_flags=flags,
                            gender=meta.get(spk, {}).get("gender", "unknown"),
                        )
                    )
    else:
        raise ValueError(f"unknown layout {layout!r}")
    if frontal_only:
        entries = [e for e in entries if any(e.frontal_flags)]
    if not entries:
        raise EmptyCorpus(f"no utterances found under {root}")
    entries.sort(key=lambda e: (SPLITS.index(e.split), e.speaker_id, e.wav_path))
    return entries


# --------------------------------------------------------------------- images


@dataclass
class FaceImage:
    pixels: np.ndarray  # [224, 224, 3] float32 in [0, 1]
    source_path: str = ""
    resized_from: tuple = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise BadImageShape(f"expected (224, 224, 3), got {self.pixels.shape}")


@functools.lru_cache(maxsize=4096)
def load_face_image(path) -> FaceImage:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        arr = np.load(path).astype(np.float32)
        if arr.max(initial=0.0) > 1.0:
            arr = arr / 255.0
        img = None
    else:
        try:
            img = Image.open(path).convert("RGB")
        except OSError as e:
            raise DecodeError(str(path), str(e)) from None
        arr = None
    resized_from = None
    if arr is not None:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise BadImageShape(f"{path}: expected HxWx3, got {arr.shape}")
        if arr.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
            resized_from = arr.shape[:2]
            img = Image.fromarray(np.uint8(np.clip(arr, 0, 1) * 255))
            arr = None
    if img is not None:
        if img.size != (IMAGE_SIZE, IMAGE_SIZE):
            resized_from = resized_from or (img.size[1], img.size[0])
            img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return FaceImage(np.clip(arr, 0.0, 1.0), str(path), resized_from)


def save_face_image(path, pixels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".npy":
        np.save(path, np.asarray(pixels, dtype=np.float32))
    else:
        Image.fromarray(np.uint8(np.clip(np.rint(np.asarray(pixels) * 255), 0, 255))).save(path)


# --------------------------------------------------------------- feature cache


@dataclass
class UtteranceFeatures:
    utt_id: str
    speaker_id: str
    wav: np.ndarray  # float32 samples
    lin: np.ndarray  # [T, n_fft/2+1]
    mel: np.ndarray  # [T, n_mels]
    f0: np.ndarray  # [T] Hz, 0 = unvoiced
    voiced: np.ndarray  # [T] bool
    content: np.ndarray  # [T, content_dim]

    @property
    def n_frames(self):
        return self.f0.shape[0]

    def contour(self):
        return F0Contour(self.f0.astype(np.float64), self.voiced)


@dataclass
class SpeakerInfo:
    speaker_id: str
    entries: list
    avg_f0: SpeakerAvgF0
    gender: str = "unknown"

    def face_paths(self):
        frontal = [p for e in self.entries for p in e.frontal_images()]
        return frontal or [p for e in self.entries for p in e.image_paths]


@dataclass
class FeatureCache:
    utterances: dict
    speakers: dict  # speaker_id -> SpeakerInfo (the speaker table)
    hits: int = 0
    misses: int = 0
    root: Path = None
    provider_id: str = ""
    dsp: DspConfig = field(default_factory=DspConfig)

    def utt_ids(self, splits=None, speakers=None):
        out = []
        for spk in sorted(self.speakers):
            if speakers is not None and spk not in speakers:
                continue
            for e in self.speakers[spk].entries:
                if splits is None or e.split in splits:
                    out.append(e.utt_id)
        return out

    def avg_f0(self, speaker_id):
        return self.speakers[speaker_id].avg_f0.avg_f0


_ARRAYS = ("wav", "lin", "mel", "f0", "voiced", "content")


def _cache_key(wav_bytes: bytes, dsp: DspConfig, provider_id: str, content_dim: int) -> str:
    h = hashlib.sha256()
    h.update(wav_bytes)
    h.update(json.dumps(config_to_dict(dsp), sort_keys=True).encode())
    h.update(f"{provider_id}|{content_dim}|v{CACHE_VERSION}".encode())
    return h.hexdigest()


class _DiskStore:
    def __init__(self, root):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.jsonl"
        self.index = {}
        if self.index_path.exists():
            with open(self.index_path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    if rec.get("version") == CACHE_VERSION and (self.root / "objects" / rec["key"]).is_dir():
                        self.index[rec["key"]] = rec

    def get(self, key):
        rec = self.index.get(key)
        if rec is None:
            return None
        d = self.root / "objects" / key
        arrays = {}
        for name, meta in rec["arrays"].items():
            raw = np.fromfile(d / f"{name}.bin", dtype=meta["dtype"])
            arrays[name] = raw.reshape(meta["shape"])
        return arrays

    def put(self, key, utt_id, arrays):
        final = self.root / "objects" / key
        tmp = Path(tempfile.mkdtemp(prefix=f".{key[:12]}-", dir=self.root / "objects"))
        meta = {}
        for name, arr in arrays.items():
            dtype = "<f4" if arr.dtype != np.bool_ else "|u1"
            arr = np.ascontiguousarray(arr.astype(dtype))
            arr.tofile(tmp / f"{name}.bin")
            meta[name] = {"dtype": dtype, "shape": list(arr.shape)}
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
        rec = {"version": CACHE_VERSION, "key": key, "utt_id": utt_id, "arrays": meta}
        with open(self.index_path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.index[key] = rec


def compute_utterance_features(wav: Waveform, dsp: DspConfig, provider, utt_id=None):
    lin, mel = compute_spectrograms(wav, dsp)
    f0 = extract_f0(wav, dsp)
    content = provider.embed_content(wav, utt_id=utt_id)
    return {
        "wav": wav.samples.astype(np.float32),
        "lin": lin.frames.astype(np.float32),
        "mel": mel.frames.astype(np.float32),
        "f0": f0.values.astype(np.float32),
        "voiced": f0.voiced_mask.copy(),
        "content": content.frames.astype(np.float32),
    }


def precompute_features(manifest, dsp_config: DspConfig, content_provider, cache_dir=None) -> FeatureCache:
    """Compute (or load from ``cache_dir``) features for every manifest entry.

    Raises NoVoicedFrames naming the first speaker whose audio has no voiced
    frame at all.
    """
    store = _DiskStore(cache_dir) if cache_dir is not None else None
    provider_id = content_provider.provider_id
    content_dim = content_provider.content_dim
    utts = {}
    hits = misses = 0
    by_speaker = {}
    for e in manifest:
        try:
            blob = Path(e.wav_path).read_bytes()
        except OSError as exc:
            raise DecodeError(e.wav_path, str(exc)) from None
        key = _cache_key(blob, dsp_config, provider_id, content_dim)
        arrays = store.get(key) if store is not None else None
        if arrays is None:
            misses += 1
            try:
                wav = read_wav(e.wav_path)
            except Exception as exc:
                raise DecodeError(e.wav_path, str(exc)) from None
            arrays = compute_utterance_features(wav, dsp_config, content_provider, e.utt_id)
            if store is not None:
                store.put(key, e.utt_id, arrays)
        else:
            hits += 1
        utts[e.utt_id] = UtteranceFeatures(
            utt_id=e.utt_id,
            speaker_id=e.speaker_id,
            wav=arrays["wav"].astype(np.float32),
            lin=arrays["lin"].astype(np.float32),
            mel=arrays["mel"].astype(np.float32),
            f0=arrays["f0"].astype(np.float32),
            voiced=arrays["voiced"].astype(bool),
            content=arrays["content"].astype(np.float32),
        )
        by_speaker.setdefault(e.speaker_id, []).append(e)

    speakers = {}
    for spk, entries in sorted(by_speaker.items()):
        contours = [utts[e.utt_id].contour() for e in entries]
        try:
            avg = compute_speaker_avg_f0(contours, spk)
        except NoVoicedFrames:
            raise NoVoicedFrames(f"speaker {spk!r} has no voiced frames in any utterance", spk) from None
        genders = {e.gender for e in entries} - {"unknown"}
        speakers[spk] = SpeakerInfo(spk, entries, avg, genders.pop() if len(genders) == 1 else "unknown")
    if store is not None:
        table = {s: asdict(i.avg_f0) | {"gender": i.gender} for s, i in speakers.items()}
        tmp = store.root / "speakers.json.tmp"
        tmp.write_text(json.dumps(table, indent=1, sort_keys=True))
        os.replace(tmp, store.root / "speakers.json")
    return FeatureCache(utts, speakers, hits, misses, store.root if store else None, provider_id, dsp_config)


# -------------------------------------------------------------------- batching


@dataclass
class TrainingBatch:
    speaker_ids: list
    utt_ids: list
    offsets: list
    face_paths: list
    wav: np.ndarray  # [B, segment * hop]
    lin: np.ndarray  # [B, segment, n_freq]
    mel: np.ndarray  # [B, segment, n_mels]
    f0: np.ndarray  # [B, segment]
    voiced: np.ndarray  # [B, segment]
    content: np.ndarray  # [B, segment, content_dim]
    faces: np.ndarray  # [B, 224, 224, 3]
    f0_avg: np.ndarray  # [B]

    def __len__(self):
        return len(self.utt_ids)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.speaker_ids, self.utt_ids, self.offsets, self.face_paths]).encode())
        return h.hexdigest()[:16]


class BatchPlan:
    """Deterministic batch schedule over a feature cache.

    Epoch ``k`` shuffles the eligible utterances with ``rng([seed, k])``;
    batch ``b`` of that epoch draws crop offsets and face images with
    ``rng([seed, k, b])``.  Any batch can therefore be rebuilt from
    ``(epoch, index)`` alone, which is what makes resumption exact.
    """

    def __init__(self, cache: FeatureCache, batch_size: int, seed: int, segment_frames: int,
                 utt_ids=None, drop_last: bool = False, pad_short: bool = False):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.cache = cache
        self.batch_size = batch_size
        self.seed = seed
        self.segment = segment_frames
        self.drop_last = drop_last
        self.pad_short = pad_short
        ids = list(utt_ids) if utt_ids is not None else cache.utt_ids(splits=("pretrain", "trainval"))
        keep = []
        for u in ids:
            if cache.utterances[u].n_frames >= segment_frames or pad_short:
                keep.append(u)
            else:
                log.warning("skipping %s: %d frames < segment %d", u, cache.utterances[u].n_frames, segment_frames)
        if not keep:
            raise EmptyCorpus("no utterance is long enough for the training segment")
        self.utt_ids = keep

    @property
    def batches_per_epoch(self):
        n = len(self.utt_ids)
        full, rem = divmod(n, self.batch_size)
        return full + (1 if rem and not self.drop_last else 0)

    def epoch_order(self, epoch):
        rng = np.random.default_rng([self.seed, epoch])
        return [self.utt_ids[i] for i in rng.permutation(len(self.utt_ids))]

    def batch(self, epoch: int, index: int) -> TrainingBatch:
        order = self.epoch_order(epoch)
        chosen = order[index * self.batch_size : (index + 1) * self.batch_size]
        rng = np.random.default_rng([self.seed, epoch, index])
        return self._assemble(chosen, rng)

    def batch_for_step(self, step: int) -> TrainingBatch:
        epoch, index = divmod(step, self.batches_per_epoch)
        return self.batch(epoch, index)

    def epoch(self, epoch: int = 0):
        for i in range(self.batches_per_epoch):
            yield self.batch(epoch, i)

    def _assemble(self, chosen, rng):
        cache = self.cache
        hop = cache.dsp.hop
        seg = self.segment
        cols = {k: [] for k in ("wav", "lin", "mel", "f0", "voiced", "content", "faces")}
        spk_ids, offsets, faces, f0_avg = [], [], [], []
        for u in chosen:
            feat = cache.utterances[u]
            spk = feat.speaker_id
            max_off = feat.n_frames - seg
            off = int(rng.integers(0, max_off + 1)) if max_off > 0 else 0
            pool = cache.speakers[spk].face_paths()
            face = pool[int(rng.integers(0, len(pool)))] if pool else None
            sl = slice(off, off + seg)

            def crop(a, pad_value=0):
                out = a[sl]
                if out.shape[0] < seg:
                    pad = [(0, seg - out.shape[0])] + [(0, 0)] * (a.ndim - 1)
                    out = np.pad(out, pad, constant_values=pad_value)
                return out

            w = feat.wav[off * hop : (off + seg) * hop]
            if w.shape[0] < seg * hop:
                w = np.pad(w, (0, seg * hop - w.shape[0]))
            cols["wav"].append(w)
            cols["lin"].append(crop(feat.lin))
            cols["mel"].append(crop(feat.mel, np.log(cache.dsp.eps)))
            cols["f0"].append(crop(feat.f0))
            cols["voiced"].append(crop(feat.voiced, False))
            cols["content"].append(crop(feat.content))
            if face is not None:
                cols["faces"].append(load_face_image(face).pixels)
            spk_ids.append(spk)
            offsets.append(off)
            faces.append(face)
            f0_avg.append(cache.avg_f0(spk))
        return TrainingBatch(
            speaker_ids=spk_ids,
            utt_ids=list(chosen),
            offsets=offsets,
            face_paths=faces,
            wav=np.stack(cols["wav"]).astype(np.float32),
            lin=np.stack(cols["lin"]),
            mel=np.stack(cols["mel"]),
            f0=np.stack(cols["f0"]),
            voiced=np.stack(cols["voiced"]),
            content=np.stack(cols["content"]),
            faces=np.stack(cols["faces"]) if cols["faces"] else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE, 3), np.float32),
            f0_avg=np.asarray(f0_avg, dtype=np.float32),
        )


def batch_iterator(cache: FeatureCache, batch_size: int, seed: int, segment_frames: int, epoch: int = 0, **kw):
    """One epoch of batches; see :class:`BatchPlan` for the seeding scheme."""
    return BatchPlan(cache, batch_size, seed, segment_frames, **kw).epoch(epoch)

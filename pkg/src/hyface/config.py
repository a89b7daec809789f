"""Configuration dataclasses and the flat ``key = value`` run-config format.

A run config file looks like::

    # comments start with '#'
    seed = 7
    dsp.hop = 320
    model.latent_dim = 96
    train.lr_g = 2e-4
    paths.cache = cache/

Keys are ``<section>.<field>`` for the ``dsp``, ``model``, ``train`` and
``paths`` sections, plus the top-level ``seed``.  Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigParse

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 320
    win: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    f0_floor: float = 50.0
    f0_ceil: float = 800.0
    yin_threshold: float = 0.15
    eps: float = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 96
    spk_dim: int = 128
    content_dim: int = 64
    hidden_dim: int = 128
    # posterior encoder (WaveNet-style residual stack)
    n_posterior_layers: int = 8
    posterior_kernel: int = 5
    # prior encoder (relative-position transformer)
    n_prior_layers: int = 4
    n_heads: int = 2
    attn_window: int = 4
    # normalizing flow
    n_flow_blocks: int = 2
    n_couplings: int = 2
    flow_layers: int = 4
    # decoder
    upsample_rates: tuple = (10, 8, 4)
    upsample_initial_channel: int = 128
    resblock_kernels: tuple = (3, 7)
    resblock_dilations: tuple = (1, 3)
    n_harmonics: int = 8
    # discriminator
    disc_periods: tuple = (2, 3)
    disc_channels: int = 16
    # face encoder / AF (ViT)
    image_size: int = 224
    face_patch: int = 32
    face_dim: int = 128
    face_layers: int = 2
    af_patch: int = 32
    af_dim: int = 64
    af_layers: int = 2
    af_init_hz: float = 200.0
    af_scale_hz: float = 100.0
    # frame-wise F0 decoder
    ff_layers: int = 2
    ff_source_mask: bool = False

    @property
    def hop_product(self):
        out = 1
        for r in self.upsample_rates:
            out *= r
        return out


@dataclass(frozen=True)
class TrainConfig:
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_af: float = 1e-4
    betas: tuple = (0.8, 0.99)
    lr_decay: float = 0.999
    batch_size: int = 4
    total_steps: int = 2000
    val_every: int = 100
    ckpt_every: int = 0
    segment_frames: int = 96
    seed: int = 1234
    w_recon: float = 1.0
    w_kl: float = 1.0
    w_adv: float = 1.0
    w_fm: float = 1.0
    w_ff: float = 1.0
    ff_voiced_only: bool = False
    af_batch_size: int = 8


@dataclass(frozen=True)
class PathsConfig:
    corpus: str = ""
    layout: str = "flat"
    manifest: str = ""
    cache: str = ""
    out: str = "runs"
    content: str = "toy"


@dataclass(frozen=True)
class RunConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 1234

    def to_dict(self):
        return config_to_dict(self)

    def content_hash(self):
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(
            dsp=dataclass_from_dict(DspConfig, d.get("dsp", {})),
            model=dataclass_from_dict(ModelConfig, d.get("model", {})),
            train=dataclass_from_dict(TrainConfig, d.get("train", {})),
            paths=dataclass_from_dict(PathsConfig, d.get("paths", {})),
            seed=int(d.get("seed", 1234)),
        )


_SECTIONS = {"dsp": DspConfig, "model": ModelConfig, "train": TrainConfig, "paths": PathsConfig}


def config_to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def dataclass_from_dict(cls, d: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigParse(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        default = known[k].default
        kwargs[k] = tuple(v) if isinstance(default, tuple) else v
    return cls(**kwargs)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(raw: str, default: Any, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigParse(f"bad value for {key}: {raw!r}") from None


def parse_run_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` text on top of ``base`` (defaults if None)."""
    base = base or RunConfig()
    sections = {name: {} for name in _SECTIONS}
    seed = base.seed
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParse(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            seed = _coerce(raw, 0, key)
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigParse(f"line {lineno}: unknown key {key!r}")
        cls = _SECTIONS[section]
        known = {f.name: f for f in fields(cls)}
        if name not in known:
            raise ConfigParse(f"line {lineno}: unknown key {key!r}")
        sections[section][name] = _coerce(raw, getattr(getattr(base, section), name), key)
    return RunConfig(
        dsp=dataclasses.replace(base.dsp, **sections["dsp"]),
        model=dataclasses.replace(base.model, **sections["model"]),
        train=dataclasses.replace(base.train, **sections["train"]),
        paths=dataclasses.replace(base.paths, **sections["paths"]),
        seed=seed,
    )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParse(f"cannot read config {path}: {e}") from None
    return parse_run_config(text)


def dump_run_config(cfg: RunConfig) -> str:
    """Render ``cfg`` in the flat format accepted by :func:`parse_run_config`."""
    lines = [f"seed = {cfg.seed}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{section}.{f.name} = {v}")
    return "\n".join(lines) + "\n"

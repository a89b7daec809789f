"""Checkpoint directories.

Layout (``FORMAT_VERSION`` 1)::

    <ckpt>/config.json        {"format_version", "kind", "run_hash", "run_config"}
    <ckpt>/params/<name>.pt   one state dict per submodule
    <ckpt>/optim.pt           optimiser state dicts
    <ckpt>/rng.pt             torch / numpy RNG state
    <ckpt>/state.json         {"step", "best_val", "best_step"}

``kind`` is ``"vc"`` (generator submodules + discriminator) or ``"af"``.
Tensors are stored in a canonical order so that saving a loaded
checkpoint reproduces the same bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import ConfigMismatch

FORMAT_VERSION = 1


def _save_tensor_dict(obj, path):
    buf = io.BytesIO()
    torch.save(obj, buf)
    Path(path).write_bytes(buf.getvalue())


def save_checkpoint(path, kind, run_config: RunConfig, modules: dict, optimizers: dict | None = None,
                    state: dict | None = None, rng: dict | None = None):
    """Write a checkpoint atomically (temp dir + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}-", dir=path.parent))
    (tmp / "params").mkdir()
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "run_hash": run_config.content_hash(),
        "run_config": run_config.to_dict(),
    }
    (tmp / "config.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for name, mod in sorted(modules.items()):
        sd = mod.state_dict() if hasattr(mod, "state_dict") else mod
        _save_tensor_dict({k: sd[k] for k in sorted(sd)}, tmp / "params" / f"{name}.pt")
    if optimizers:
        _save_tensor_dict({k: (v.state_dict() if hasattr(v, "state_dict") else v) for k, v in sorted(optimizers.items())},
                          tmp / "optim.pt")
    if rng is not None:
        _save_tensor_dict(rng, tmp / "rng.pt")
    (tmp / "state.json").write_text(json.dumps(state or {}, indent=1, sort_keys=True))
    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)
    return path


def read_meta(path):
    path = Path(path)
    meta = json.loads((path / "config.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigMismatch(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
    return meta


def load_run_config_from(path) -> RunConfig:
    return RunConfig.from_dict(read_meta(path)["run_config"])


def load_params(path, name):
    return torch.load(Path(path) / "params" / f"{name}.pt", weights_only=True)


def load_optimizers(path):
    p = Path(path) / "optim.pt"
    return torch.load(p, weights_only=False) if p.exists() else {}


def load_rng(path):
    p = Path(path) / "rng.pt"
    return torch.load(p, weights_only=False) if p.exists() else None


def load_state(path):
    p = Path(path) / "state.json"
    return json.loads(p.read_text()) if p.exists() else {}


def capture_rng():
    return {"torch": torch.get_rng_state(), "numpy": np.random.get_state()}


def restore_rng(rng):
    if rng:
        torch.set_rng_state(rng["torch"])
        np.random.set_state(rng["numpy"])


def module_hash(module) -> str:
    """SHA-256 over every parameter and buffer of ``module``, in name order."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def directory_digest(path) -> str:
    """Hash of every file under ``path`` (relative name + bytes)."""
    path = Path(path)
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()

"""Training loops for the voice-conversion network and the average-F0 network.

The two are trained independently.  During VC training the frame-wise F0
decoder is fed the speaker's cached ground-truth average F0; the AF network
is trained on face images against the same cached averages and never sees
the VC graph.

Randomness is derived from ``(seed, step)`` for every step (posterior
noise, NSF noise, batch composition), so a run resumed from a checkpoint
at step ``k`` continues exactly as the uninterrupted run would.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import RunConfig
from .dataset import BatchPlan, FeatureCache, TrainingBatch, load_face_image
from .errors import EmptyCorpus, NonFiniteLoss, ResumeMismatch
from .losses import (
    LossBreakdown,
    adv_d_loss,
    adv_g_loss,
    af_loss,
    ff_loss,
    fm_loss,
    kl_loss,
    recon_loss,
    total_vc_loss,
)
from .model import HYFaceVC, build_af, build_discriminator

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    step: int = 0
    best_val: float = math.inf
    best_step: int = -1
    seed: int = 1234

    def to_dict(self):
        return {"step": self.step, "best_val": self.best_val if math.isfinite(self.best_val) else None,
                "best_step": self.best_step, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        bv = d.get("best_val")
        return cls(d.get("step", 0), math.inf if bv is None else bv, d.get("best_step", -1), d.get("seed", 1234))


@dataclass
class VCModels:
    vc: HYFaceVC
    disc: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    run: RunConfig

    @classmethod
    def create(cls, run: RunConfig):
        torch.manual_seed(run.seed)
        vc = HYFaceVC(run.model, run.dsp)
        disc = build_discriminator(run.model)
        t = run.train
        opt_g = torch.optim.Adam(vc.parameters(), lr=t.lr_g, betas=t.betas, eps=1e-9)
        opt_d = torch.optim.Adam(disc.parameters(), lr=t.lr_d, betas=t.betas, eps=1e-9)
        return cls(vc, disc, opt_g, opt_d, run)


@dataclass
class AFModels:
    af: torch.nn.Module
    opt: torch.optim.Optimizer
    run: RunConfig

    @classmethod
    def create(cls, run: RunConfig):
        torch.manual_seed(run.seed)
        af = build_af(run.model, run.dsp)
        opt = torch.optim.Adam(af.parameters(), lr=run.train.lr_af, betas=(0.9, 0.999))
        return cls(af, opt, run)


def step_generator(seed: int, step: int, stream: int = 0) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed((seed * 1_000_003 + step * 7919 + stream) % (2**63 - 1))
    return g


def batch_tensors(batch: TrainingBatch):
    return {
        "wav": torch.from_numpy(batch.wav),
        "lin": torch.from_numpy(batch.lin).transpose(1, 2).contiguous(),
        "content": torch.from_numpy(batch.content).transpose(1, 2).contiguous(),
        "f0": torch.from_numpy(batch.f0),
        "voiced": torch.from_numpy(batch.voiced),
        "faces": torch.from_numpy(batch.faces),
        "f0_avg": torch.from_numpy(batch.f0_avg),
    }


def _check_finite(step, **terms):
    for name, v in terms.items():
        if not torch.isfinite(v).all():
            raise NonFiniteLoss(step, name)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def train_vc_step(batch: TrainingBatch, models: VCModels, state: TrainState, epoch: int = 0) -> LossBreakdown:
    """One discriminator update followed by one generator-side update."""
    vc, disc, run = models.vc, models.disc, models.run
    t = run.train
    vc.train()
    disc.train()
    _set_lr(models.opt_g, t.lr_g * t.lr_decay**epoch)
    _set_lr(models.opt_d, t.lr_d * t.lr_decay**epoch)
    gen = step_generator(state.seed, state.step)
    b = batch_tensors(batch)
    seg = b["f0"].shape[1]
    y = b["wav"].unsqueeze(1)

    s = vc.face_encoder(b["faces"])
    z, m_q, logs_q = vc.posterior(b["lin"], s, generator=gen)
    m_p, logs_p = vc.prior(b["content"], b["f0"], b["voiced"], s)
    z_p, log_det = vc.flow(z, s)
    y_hat = vc.decoder(z, b["f0"], s, generator=gen)

    # discriminator
    d_real = disc(y)
    d_fake = disc(y_hat.detach())
    loss_d = adv_d_loss(d_real.logits, d_fake.logits)
    _check_finite(state.step, adv_d=loss_d)
    models.opt_d.zero_grad(set_to_none=True)
    loss_d.backward()
    models.opt_d.step()

    # generator side
    mel = vc.mel(y[:, 0])[..., :seg]
    mel_hat = vc.mel(y_hat[:, 0])[..., :seg]
    l_recon = recon_loss(mel, mel_hat)
    l_kl = kl_loss(z, m_q, logs_q, m_p, logs_p, z_p=z_p, flow_log_det=log_det)
    d_fake = disc(y_hat)
    with torch.no_grad():
        d_real = disc(y)
    l_adv = adv_g_loss(d_fake.logits)
    l_fm = fm_loss(d_real, d_fake)
    f0_soft, _, _ = vc.ff(b["f0_avg"], b["content"], s)
    l_ff = ff_loss(f0_soft, b["f0"], voiced=b["voiced"], voiced_only=t.ff_voiced_only)
    parts = {"recon": l_recon, "kl": l_kl, "adv_g": l_adv, "fm": l_fm, "ff": l_ff}
    weights = {"recon": t.w_recon, "kl": t.w_kl, "adv_g": t.w_adv, "fm": t.w_fm, "ff": t.w_ff}
    total = total_vc_loss(parts, weights)
    _check_finite(state.step, **parts, total_vc=total)
    models.opt_g.zero_grad(set_to_none=True)
    models.opt_d.zero_grad(set_to_none=True)
    total.backward()
    models.opt_g.step()
    models.opt_d.zero_grad(set_to_none=True)

    state.step += 1
    return LossBreakdown(
        recon=l_recon.item(), kl=l_kl.item(), adv_g=l_adv.item(), adv_d=loss_d.item(), fm=l_fm.item(),
        ff=l_ff.item(), af=0.0, total_vc=total.item(),
    )


@torch.no_grad()
def vc_validation(models: VCModels, cache: FeatureCache, val_ids, seed: int = 0) -> float:
    """Held-out mel L1 of the posterior-mean reconstruction with ground-truth F0."""
    vc = models.vc
    vc.eval()
    losses = []
    for i, u in enumerate(val_ids):
        feat = cache.utterances[u]
        faces = cache.speakers[feat.speaker_id].face_paths()
        img = torch.from_numpy(load_face_image(faces[0]).pixels)[None]
        s = vc.face_encoder(img)
        lin = torch.from_numpy(feat.lin.T.copy())[None]
        _, m_q, _ = vc.posterior(lin, s, noise=torch.zeros(1, vc.cfg.latent_dim, lin.shape[-1]))
        f0 = torch.from_numpy(feat.f0)[None]
        y_hat = vc.decoder(m_q, f0, s, generator=step_generator(seed, i, stream=1))
        n = feat.n_frames
        target = vc.mel(torch.from_numpy(feat.wav)[None])[..., :n]
        losses.append(float(recon_loss(target, vc.mel(y_hat[:, 0])[..., :n])))
    return float(np.mean(losses))


def train_af_step(face_batch, af_models: AFModels, state: TrainState) -> float:
    """One gradient step on the squared average-F0 error.

    ``face_batch`` is ``(images [B, 224, 224, 3], targets [B] Hz)``.
    """
    images, targets = face_batch
    images = torch.as_tensor(images, dtype=torch.float32)
    targets = torch.as_tensor(targets, dtype=torch.float32)
    af_models.af.train()
    pred = af_models.af(images)
    loss = af_loss(pred, targets)
    _check_finite(state.step, af=loss)
    af_models.opt.zero_grad(set_to_none=True)
    loss.backward()
    af_models.opt.step()
    state.step += 1
    return loss.item()


# ------------------------------------------------------------------ runner


def default_split(cache: FeatureCache):
    """Train on ``pretrain`` and validate on ``trainval``; without a
    ``pretrain`` split, hold out the last ``trainval`` utterance per speaker."""
    train = cache.utt_ids(splits=("pretrain",))
    val = cache.utt_ids(splits=("trainval",))
    if train:
        return train, val
    train, val = [], []
    for spk in sorted(cache.speakers):
        ids = [e.utt_id for e in cache.speakers[spk].entries if e.split == "trainval"]
        if len(ids) >= 2:
            train += ids[:-1]
            val.append(ids[-1])
        else:
            train += ids
    return train, val


class _JsonlLog:
    def __init__(self, path, keep_until_step=None):
        self.path = Path(path)
        if keep_until_step is None:
            self.path.write_text("")
        elif self.path.exists():
            kept = [ln for ln in self.path.read_text().splitlines() if ln and json.loads(ln)["step"] <= keep_until_step]
            self.path.write_text("".join(ln + "\n" for ln in kept))
        self.fh = open(self.path, "a")

    def write(self, rec):
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_log(path):
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def _vc_modules(models: VCModels):
    mods = {name: getattr(models.vc, name) for name in ("face_encoder", "posterior", "prior", "flow", "decoder", "ff")}
    mods["discriminator"] = models.disc
    return mods


def save_vc(path, models: VCModels, state: TrainState):
    return ckpt.save_checkpoint(
        path, "vc", models.run, _vc_modules(models),
        optimizers={"g": models.opt_g, "d": models.opt_d}, state=state.to_dict(), rng=ckpt.capture_rng(),
    )


def load_vc(path, run: RunConfig | None = None, with_optim: bool = True):
    meta = ckpt.read_meta(path)
    if meta["kind"] != "vc":
        raise ResumeMismatch(f"{path} is a {meta['kind']!r} checkpoint, expected 'vc'")
    run = run or RunConfig.from_dict(meta["run_config"])
    models = VCModels.create(run)
    for name, mod in _vc_modules(models).items():
        mod.load_state_dict(ckpt.load_params(path, name))
    if with_optim:
        opts = ckpt.load_optimizers(path)
        if opts:
            models.opt_g.load_state_dict(opts["g"])
            models.opt_d.load_state_dict(opts["d"])
    state = TrainState.from_dict(ckpt.load_state(path))
    return models, state


def save_af(path, models: AFModels, state: TrainState):
    return ckpt.save_checkpoint(
        path, "af", models.run, {"af": models.af}, optimizers={"af": models.opt},
        state=state.to_dict(), rng=ckpt.capture_rng(),
    )


def load_af(path, run: RunConfig | None = None, with_optim: bool = True):
    meta = ckpt.read_meta(path)
    if meta["kind"] != "af":
        raise ResumeMismatch(f"{path} is a {meta['kind']!r} checkpoint, expected 'af'")
    run = run or RunConfig.from_dict(meta["run_config"])
    models = AFModels.create(run)
    models.af.load_state_dict(ckpt.load_params(path, "af"))
    if with_optim:
        opts = ckpt.load_optimizers(path)
        if opts:
            models.opt.load_state_dict(opts["af"])
    return models, TrainState.from_dict(ckpt.load_state(path))


def _resume_point(out_dir: Path, run: RunConfig, resume: bool):
    last = out_dir / "last"
    if not resume or not last.exists():
        return None
    meta = ckpt.read_meta(last)
    if meta["run_hash"] != run.content_hash():
        raise ResumeMismatch(f"config hash {run.content_hash()} != checkpoint {meta['run_hash']}")
    return last


def af_samples(cache: FeatureCache, speakers):
    out = []
    for spk in sorted(speakers):
        for p in cache.speakers[spk].face_paths():
            out.append((p, cache.avg_f0(spk)))
    return out


def af_batch(samples, batch_size, seed, step):
    rng = np.random.default_rng([seed, step, 17])
    idx = rng.integers(0, len(samples), size=batch_size)
    imgs = np.stack([load_face_image(samples[i][0]).pixels for i in idx])
    tgt = np.asarray([samples[i][1] for i in idx], dtype=np.float32)
    return imgs, tgt


@torch.no_grad()
def af_validation(af, samples, chunk=16):
    af.eval()
    errs = []
    for i in range(0, len(samples), chunk):
        part = samples[i : i + chunk]
        imgs = torch.from_numpy(np.stack([load_face_image(p).pixels for p, _ in part]))
        pred = af(imgs).numpy()
        errs.extend((pred - np.asarray([t for _, t in part])) ** 2)
    return float(np.mean(errs))


def run_training(run: RunConfig, cache: FeatureCache, mode: str, out_dir, resume: bool = False,
                 train_ids=None, val_ids=None, max_steps: int | None = None) -> Path:
    """Train ``mode`` ("vc" or "af") and return the final checkpoint path.

    Writes ``train_log.jsonl`` (one record per step), ``val_log.jsonl``
    (one record every ``val_every`` steps), ``best/`` (lowest validation
    loss) and ``last/``; ``final/`` once ``total_steps`` is reached.
    ``max_steps`` stops early (used to simulate an interruption).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if mode == "vc":
        return _run_vc(run, cache, out_dir, resume, train_ids, val_ids, max_steps)
    if mode == "af":
        return _run_af(run, cache, out_dir, resume, train_ids, val_ids, max_steps)
    raise ValueError(f"unknown mode {mode!r}")


def _run_vc(run, cache, out_dir, resume, train_ids, val_ids, max_steps):
    t = run.train
    if train_ids is None or val_ids is None:
        d_train, d_val = default_split(cache)
        train_ids = d_train if train_ids is None else train_ids
        val_ids = d_val if val_ids is None else val_ids
    plan = BatchPlan(cache, t.batch_size, run.seed, t.segment_frames, utt_ids=train_ids)
    start = _resume_point(out_dir, run, resume)
    if start is not None:
        models, state = load_vc(start, run)
        ckpt.restore_rng(ckpt.load_rng(start))
    else:
        models, state = VCModels.create(run), TrainState(seed=run.seed)
    train_log = _JsonlLog(out_dir / "train_log.jsonl", keep_until_step=state.step if start else None)
    val_log = _JsonlLog(out_dir / "val_log.jsonl", keep_until_step=state.step if start else None)
    stop = t.total_steps if max_steps is None else min(max_steps, t.total_steps)
    try:
        while state.step < stop:
            epoch, index = divmod(state.step, plan.batches_per_epoch)
            batch = plan.batch(epoch, index)
            t0 = time.perf_counter()
            parts = train_vc_step(batch, models, state, epoch=epoch)
            rec = {"step": state.step, "lr": t.lr_g * t.lr_decay**epoch,
                   "wall_ms": round(1000 * (time.perf_counter() - t0), 2)}
            rec.update(parts.to_dict())
            train_log.write(rec)
            if t.val_every and state.step % t.val_every == 0 and val_ids:
                v = vc_validation(models, cache, val_ids, seed=run.seed)
                val_log.write({"step": state.step, "val_recon": v})
                if v < state.best_val:
                    state.best_val, state.best_step = v, state.step
                    save_vc(out_dir / "best", models, state)
            if t.ckpt_every and state.step % t.ckpt_every == 0:
                save_vc(out_dir / "last", models, state)
    finally:
        train_log.close()
        val_log.close()
    save_vc(out_dir / "last", models, state)
    if state.step >= t.total_steps:
        return save_vc(out_dir / "final", models, state)
    return out_dir / "last"


def _run_af(run, cache, out_dir, resume, train_ids, val_ids, max_steps):
    t = run.train
    if train_ids is None:
        train_spk = sorted({cache.utterances[u].speaker_id for u in cache.utt_ids(splits=("pretrain", "trainval"))})
    else:
        train_spk = sorted(set(train_ids))
    if val_ids is None:
        val_spk = sorted({cache.utterances[u].speaker_id for u in cache.utt_ids(splits=("test",))})
    else:
        val_spk = sorted(set(val_ids))
    samples = af_samples(cache, train_spk)
    if not samples:
        raise EmptyCorpus("no face images for AF training")
    val_samples = af_samples(cache, val_spk)
    start = _resume_point(out_dir, run, resume)
    if start is not None:
        models, state = load_af(start, run)
        ckpt.restore_rng(ckpt.load_rng(start))
    else:
        models, state = AFModels.create(run), TrainState(seed=run.seed)
    train_log = _JsonlLog(out_dir / "train_log.jsonl", keep_until_step=state.step if start else None)
    val_log = _JsonlLog(out_dir / "val_log.jsonl", keep_until_step=state.step if start else None)
    stop = t.total_steps if max_steps is None else min(max_steps, t.total_steps)
    try:
        while state.step < stop:
            batch = af_batch(samples, t.af_batch_size, run.seed, state.step)
            t0 = time.perf_counter()
            loss = train_af_step(batch, models, state)
            train_log.write({"step": state.step, "af": loss, "lr": t.lr_af,
                             "wall_ms": round(1000 * (time.perf_counter() - t0), 2)})
            if t.val_every and state.step % t.val_every == 0 and val_samples:
                v = af_validation(models.af, val_samples)
                val_log.write({"step": state.step, "val_af": v})
                if v < state.best_val:
                    state.best_val, state.best_step = v, state.step
                    save_af(out_dir / "best", models, state)
            if t.ckpt_every and state.step % t.ckpt_every == 0:
                save_af(out_dir / "last", models, state)
    finally:
        train_log.close()
        val_log.close()
    save_af(out_dir / "last", models, state)
    if state.step >= t.total_steps:
        return save_af(out_dir / "final", models, state)
    return out_dir / "last"

import dataclasses
import math

import numpy as np
import pytest
import torch

from hyface import checkpoint as ck
from hyface.config import ModelConfig, RunConfig, TrainConfig
from hyface.dataset import BatchPlan
from hyface.errors import NonFiniteLoss, ResumeMismatch
from hyface.losses import af_loss
from hyface.synth import face_pitch_corpus
from hyface.training import (
    AFModels,
    TrainState,
    VCModels,
    default_split,
    load_af,
    load_vc,
    read_log,
    run_training,
    save_vc,
    train_af_step,
    train_vc_step,
    vc_validation,
)

from conftest import TINY, tiny_run


def _strip(path):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in read_log(path)]


def test_default_split(tiny_cache):
    train, val = default_split(tiny_cache)
    assert len(val) == 2 and len(train) == 8
    assert not set(train) & set(val)
    assert {u.split("/")[0] for u in val} == {"spkA", "spkB"}


def test_step_decreases_nothing_nonfinite(tiny_cache):
    run = tiny_run()
    models, state = VCModels.create(run), TrainState(seed=run.seed)
    plan = BatchPlan(tiny_cache, 2, 0, 16)
    out = train_vc_step(plan.batch(0, 0), models, state)
    d = out.to_dict()
    assert state.step == 1
    assert all(math.isfinite(v) for k, v in d.items())
    assert d["total_vc"] == pytest.approx(d["recon"] + d["kl"] + d["adv_g"] + d["fm"] + d["ff"], rel=1e-5)


def test_nan_parameter_names_term(tiny_cache):
    run = tiny_run()
    models, state = VCModels.create(run), TrainState(seed=run.seed)
    with torch.no_grad():
        next(models.disc.parameters()).fill_(float("nan"))
    with pytest.raises(NonFiniteLoss) as ei:
        train_vc_step(BatchPlan(tiny_cache, 2, 0, 16).batch(0, 0), models, state)
    assert ei.value.term == "adv_d"
    models = VCModels.create(run)
    with torch.no_grad():
        models.vc.ff.proj.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLoss) as ei:
        train_vc_step(BatchPlan(tiny_cache, 2, 0, 16).batch(0, 0), models, TrainState())
    assert ei.value.term == "ff"


def test_identical_logs_200_steps(tiny_cache, tmp_path):
    run = tiny_run(total_steps=200, val_every=100)
    run_training(run, tiny_cache, "vc", tmp_path / "a")
    run_training(run, tiny_cache, "vc", tmp_path / "b")
    a, b = _strip(tmp_path / "a" / "train_log.jsonl"), _strip(tmp_path / "b" / "train_log.jsonl")
    assert len(a) == 200 and a == b
    assert read_log(tmp_path / "a" / "val_log.jsonl") == read_log(tmp_path / "b" / "val_log.jsonl")
    assert ck.directory_digest(tmp_path / "a" / "final" / "params") == ck.directory_digest(tmp_path / "b" / "final" / "params")


def test_validation_cadence(tiny_cache, tmp_path):
    run = tiny_run(total_steps=500, val_every=100)
    run_training(run, tiny_cache, "vc", tmp_path)
    val = read_log(tmp_path / "val_log.jsonl")
    assert [r["step"] for r in val] == [100, 200, 300, 400, 500]
    assert (tmp_path / "best").is_dir() and (tmp_path / "final").is_dir()


def test_resume_matches_uninterrupted(tiny_cache, tmp_path):
    run = tiny_run(total_steps=8, val_every=2, ckpt_every=1)
    full = run_training(run, tiny_cache, "vc", tmp_path / "full")
    run_training(run, tiny_cache, "vc", tmp_path / "part", max_steps=5)
    assert len(read_log(tmp_path / "part" / "train_log.jsonl")) == 5
    resumed = run_training(run, tiny_cache, "vc", tmp_path / "part", resume=True)
    assert _strip(tmp_path / "full" / "train_log.jsonl") == _strip(tmp_path / "part" / "train_log.jsonl")
    assert read_log(tmp_path / "full" / "val_log.jsonl") == read_log(tmp_path / "part" / "val_log.jsonl")
    assert ck.directory_digest(full / "params") == ck.directory_digest(resumed / "params")


def test_resume_with_other_config_rejected(tiny_cache, tmp_path):
    run = tiny_run(total_steps=4, ckpt_every=1)
    run_training(run, tiny_cache, "vc", tmp_path, max_steps=2)
    other = dataclasses.replace(run, seed=99)
    with pytest.raises(ResumeMismatch):
        run_training(other, tiny_cache, "vc", tmp_path, resume=True)


def test_checkpoint_bytes_stable(tiny_cache, tmp_path):
    run = tiny_run(total_steps=3)
    final = run_training(run, tiny_cache, "vc", tmp_path / "r")
    models, state = load_vc(final, run)
    save_vc(tmp_path / "again", models, state)
    for rel in ["config.json", "state.json", "optim.pt"] + [f"params/{p.name}" for p in (final / "params").iterdir()]:
        assert (final / rel).read_bytes() == (tmp_path / "again" / rel).read_bytes(), rel
    with pytest.raises(ResumeMismatch):
        load_af(final)


def test_validation_uses_posterior_mean(tiny_cache):
    run = tiny_run()
    models = VCModels.create(run)
    _, val = default_split(tiny_cache)
    assert vc_validation(models, tiny_cache, val) == vc_validation(models, tiny_cache, val)


def test_af_does_not_touch_vc(tiny_cache, tmp_path):
    run = tiny_run(total_steps=100, val_every=0)
    vc = VCModels.create(run)
    before = ck.module_hash(vc.vc), ck.module_hash(vc.disc)
    imgs, tgt, _ = face_pitch_corpus(8, 2, seed=0)
    af, state = AFModels.create(run), TrainState()
    rng = np.random.default_rng(0)
    for _ in range(100):
        idx = rng.integers(0, len(tgt), 4)
        train_af_step((imgs[idx], tgt[idx]), af, state)
    assert (ck.module_hash(vc.vc), ck.module_hash(vc.disc)) == before


def test_af_initial_loss_near_target_variance():
    imgs, tgt, _ = face_pitch_corpus(64, 1, seed=1)
    af = AFModels.create(RunConfig()).af.eval()
    with torch.no_grad():
        loss = float(af_loss(af(torch.from_numpy(imgs)), torch.from_numpy(tgt)))
    # uniform [100, 300] Hz around the 200 Hz initial output: 200**2 / 12
    assert loss == pytest.approx(200.0**2 / 12, rel=0.5)


def test_af_mode_ignores_decoder_config(tiny_cache, tmp_path):
    broken = dataclasses.replace(TINY, upsample_rates=(2, 2))
    run = RunConfig(model=broken, train=TrainConfig(total_steps=3, af_batch_size=2, val_every=0))
    final = run_training(run, tiny_cache, "af", tmp_path)
    models, state = load_af(final)
    assert state.step == 3
    assert len(read_log(tmp_path / "train_log.jsonl")) == 3


def test_optimizer_steps_are_isolated(tiny_cache):
    run = tiny_run()
    models, state = VCModels.create(run), TrainState(seed=run.seed)
    seen = []

    def watch(opt, other):
        inner = opt.step

        def step(*a, **kw):
            before = ck.module_hash(other)
            out = inner(*a, **kw)
            seen.append(ck.module_hash(other) == before)
            return out

        opt.step = step

    watch(models.opt_d, models.vc)
    watch(models.opt_g, models.disc)
    plan = BatchPlan(tiny_cache, 2, 0, 16)
    for i in range(3):
        train_vc_step(plan.batch(0, i % plan.batches_per_epoch), models, state)
    assert seen == [True] * 6

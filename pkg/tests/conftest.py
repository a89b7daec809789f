import dataclasses
import sys
import time

import numpy as np
import pytest
import torch

from hyface.config import DspConfig, ModelConfig, RunConfig, TrainConfig
from hyface.content import ToyContentProvider
from hyface.dataset import build_manifest, precompute_features
from hyface.synth import SpeakerSpec, write_corpus

torch.set_num_threads(1)

# small enough for unit tests, same topology as the default model
TINY = ModelConfig(latent_dim=8, spk_dim=16, content_dim=16, hidden_dim=16, n_posterior_layers=2, n_prior_layers=1,
                   flow_layers=2, upsample_initial_channel=16, face_dim=16, face_layers=1, af_dim=16, af_layers=1,
                   disc_channels=4, ff_layers=1)

# the configuration used for the 2000-step overfit run
SLIM = ModelConfig(latent_dim=32, spk_dim=32, hidden_dim=64, n_posterior_layers=4, n_prior_layers=2, flow_layers=2,
                   upsample_initial_channel=64, face_dim=64, disc_channels=8, ff_layers=2)

FIXTURE_SPEAKERS = [SpeakerSpec("spkA", 120.0, 1.0, "M"), SpeakerSpec("spkB", 220.0, 0.85, "F")]


@pytest.fixture(scope="session")
def dsp():
    return DspConfig()


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """2 speakers x 5 utterances x 4 faces, flat layout."""
    root = tmp_path_factory.mktemp("corpus")
    return write_corpus(root, FIXTURE_SPEAKERS, n_utts=5, n_faces=4, duration=2.0, seed=0)


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("cache")


@pytest.fixture(scope="session")
def cache(corpus, cache_dir, dsp):
    return precompute_features(build_manifest(corpus), dsp, ToyContentProvider(64, dsp=dsp), cache_dir=cache_dir)


@pytest.fixture(scope="session")
def tiny_cache(corpus, tmp_path_factory, dsp):
    d = tmp_path_factory.mktemp("tiny_cache")
    return precompute_features(build_manifest(corpus), dsp, ToyContentProvider(TINY.content_dim, dsp=dsp), cache_dir=d)


def tiny_run(**train):
    base = dict(batch_size=2, segment_frames=16, total_steps=4, val_every=2)
    base.update(train)
    return RunConfig(model=TINY, train=TrainConfig(**base))


@pytest.fixture(scope="session")
def overfit(corpus, cache, tmp_path_factory):
    """The 2000-step VC overfit run (shared by the acceptance criteria)."""
    from hyface.training import run_training

    out = tmp_path_factory.mktemp("overfit")
    run = RunConfig(model=SLIM, train=TrainConfig(batch_size=4, segment_frames=32, total_steps=2000, val_every=250))
    t0 = time.time()
    final = run_training(run, cache, "vc", out)
    return dataclasses.make_dataclass("Overfit", ["out", "final", "run", "seconds"])(out, final, run, time.time() - t0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)

import dataclasses

import pytest

from hyface.config import (
    DspConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    dump_run_config,
    load_run_config,
    parse_run_config,
)
from hyface.errors import ConfigParse


def test_defaults_consistent():
    run = RunConfig()
    assert run.model.hop_product == run.dsp.hop == 320
    assert run.dsp.n_fft // 2 + 1 == 513


def test_dump_parse_roundtrip():
    run = RunConfig(model=ModelConfig(latent_dim=32, upsample_rates=(8, 5, 8)), train=TrainConfig(lr_g=1e-3), seed=9)
    back = parse_run_config(dump_run_config(run))
    assert back == run
    assert back.content_hash() == run.content_hash()


def test_hash_sensitive_to_every_section():
    base = RunConfig()
    h = base.content_hash()
    variants = [
        dataclasses.replace(base, seed=1),
        dataclasses.replace(base, dsp=DspConfig(yin_threshold=0.2)),
        dataclasses.replace(base, train=TrainConfig(batch_size=8)),
        dataclasses.replace(base, model=ModelConfig(n_heads=4)),
    ]
    assert len({v.content_hash() for v in variants} | {h}) == 5


def test_parse_comments_and_types():
    run = parse_run_config("""
        # comment line
        seed = 7
        train.total_steps = 10   # trailing comment
        train.ff_voiced_only = true
        model.upsample_rates = 8, 8, 5
        dsp.fmax = 7600
    """)
    assert run.seed == 7 and run.train.total_steps == 10 and run.train.ff_voiced_only is True
    assert run.model.upsample_rates == (8, 8, 5)
    assert run.dsp.fmax == 7600.0 and isinstance(run.dsp.fmax, float)


@pytest.mark.parametrize("text", [
    "train.totl_steps = 3",
    "nosection = 1",
    "model = 3",
    "train.batch_size = four",
    "train.ff_voiced_only = maybe",
    "just a line",
])
def test_strict_rejection(text):
    with pytest.raises(ConfigParse):
        parse_run_config(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigParse):
        load_run_config(tmp_path / "nope.cfg")


def test_from_dict_rejects_unknown():
    d = RunConfig().to_dict()
    d["model"]["bogus"] = 1
    with pytest.raises(ConfigParse):
        RunConfig.from_dict(d)
    assert RunConfig.from_dict(RunConfig().to_dict()) == RunConfig()

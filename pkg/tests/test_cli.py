import dataclasses
import json

import numpy as np
import pytest

from hyface.cli import main
from hyface.config import TrainConfig, dump_run_config
from hyface.evaluation import BuiltinEmbedder
from hyface.audio_dsp import read_wav
from hyface.inference import read_results

import oracles
from conftest import tiny_run

PAIRS = [(s, t, k) for s in ("spkA", "spkB") for t in ("spkA", "spkB") for k in (0, 1)]


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else json.loads(err.strip().splitlines()[-1])), err


@pytest.fixture(scope="module")
def pipeline(corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run = dataclasses.replace(tiny_run(total_steps=3, af_batch_size=2, val_every=0), seed=7)
    (root / "run.txt").write_text(dump_run_config(run))
    (root / "pairs.jsonl").write_text("".join(json.dumps(list(p)) + "\n" for p in PAIRS))
    return root


def test_end_to_end(pipeline, corpus, capsys):
    root = pipeline
    cfg = ["--config", root / "run.txt"]
    code, out, _ = run_cli(capsys, "prepare", "--corpus", corpus, "--out", root / "cache", *cfg)
    assert code == 0 and out["n_utterances"] == 10
    assert set(out["speakers"]) == {"spkA", "spkB"}
    assert (root / "cache" / "manifest.jsonl").exists()

    code, vc, _ = run_cli(capsys, "train", "--mode", "vc", "--cache", root / "cache", "--out", root / "vc", *cfg)
    assert code == 0 and vc["run_hash"] == out["run_hash"]
    code, af, _ = run_cli(capsys, "train", "--mode", "af", "--cache", root / "cache", "--out", root / "af", *cfg)
    assert code == 0

    code, res, _ = run_cli(capsys, "convert", "--vc", vc["checkpoint"], "--af", af["checkpoint"],
                           "--batch", root / "pairs.jsonl", "--cache", root / "cache",
                           "--f0-avg-override", "200", "--out", root / "conv", "--seed", 3)
    assert code == 0 and res["n_records"] == len(PAIRS)
    records = read_results(root / "conv" / "results.jsonl")
    assert [r.f0_avg for r in records] == [200.0] * len(PAIRS)
    assert {r.run_hash for r in records} == {res["run_hash"]}

    code, ev, err = run_cli(capsys, "eval", "--results", root / "conv" / "results.jsonl", "--cache", root / "cache",
                            "--embedder", "builtin", "--out", root / "report.json", *cfg)
    assert code == 0 and "HMG" in err
    report = json.loads((root / "report.json").read_text())

    emb = BuiltinEmbedder()
    per = {}
    for r in records:
        if r.source_id == r.target_id:
            per.setdefault(r.target_id, []).append(emb.embed(read_wav(r.wav_path)).vector)
    brute = oracles.mean(oracles.brute_homogeneity({t: v}) for t, v in sorted(per.items()))
    assert report["aggregates"]["homogeneity"]["HMG"] == pytest.approx(brute, abs=1e-12)
    assert set(report["pitch_deviation"]["per_set"]) == {"M2M", "F2F", "M2F", "F2M"}
    assert report["provenance"]["embedder_id"] == "builtin-melstats-v1"
    assert report["provenance"]["results_run_hash"] == [res["run_hash"]]
    assert report["notes"]["averaging"]


def test_single_source_convert(pipeline, corpus, capsys):
    root = pipeline
    if not (root / "vc" / "final").exists():
        pytest.skip("needs the end-to-end checkpoints")
    out = []
    for k in range(2):
        code, res, _ = run_cli(capsys, "convert", "--vc", root / "vc" / "final", "--af", root / "af" / "final",
                               "--source", corpus / "spkA" / "utt00.wav", "--faces", corpus / "spkB" / "faces",
                               "--out", root / f"single{k}", "--seed", 1)
        assert code == 0
        out.append((root / f"single{k}" / "faces" / "utt00_0.wav").read_bytes())
    assert out[0] == out[1]
    rec = read_results(root / "single0" / "results.jsonl")[0]
    assert rec.f0_avg_source == "af" and len(rec.face_ids) == 4


def test_error_record(tmp_path, capsys):
    code, err, _ = run_cli(capsys, "convert", "--vc", tmp_path / "missing", "--source", tmp_path / "x.wav",
                           "--faces", tmp_path, "--out", tmp_path / "o")
    assert code == 2
    assert set(err) >= {"error", "module", "operation", "message"}
    assert err["operation"] == "cmd_convert"


def test_unknown_config_key(tmp_path, corpus, capsys):
    (tmp_path / "bad.txt").write_text("train.batch_sise = 4\n")
    code, err, _ = run_cli(capsys, "prepare", "--corpus", corpus, "--out", tmp_path / "c", "--config", tmp_path / "bad.txt")
    assert code == 2 and err["error"] == "ConfigParse" and err["module"] == "cli"


def test_unknown_speaker_in_batch(pipeline, capsys, tmp_path):
    root = pipeline
    if not (root / "vc" / "final").exists():
        pytest.skip("needs the end-to-end checkpoints")
    (tmp_path / "p.jsonl").write_text('["spkA", "ghost", 0]\n')
    code, err, _ = run_cli(capsys, "convert", "--vc", root / "vc" / "final", "--batch", tmp_path / "p.jsonl",
                           "--cache", root / "cache", "--f0-avg-override", "200", "--out", tmp_path / "o")
    assert code == 2 and err["error"] == "UnknownSpeaker"


def test_selftest(capsys):
    code, out, err = run_cli(capsys, "selftest")
    assert code == 0 and out["passed"] == out["total"] == 8
    assert err.count("PASS") == 8

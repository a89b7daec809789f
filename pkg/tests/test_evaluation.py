import itertools
import json

import numpy as np
import pytest
from scipy import stats

from hyface.audio_dsp import Waveform, write_wav
from hyface.errors import (
    DegenerateVariance,
    DimMismatch,
    GenderMismatch,
    InsufficientEmbeddings,
    InsufficientSpeakers,
    LengthMismatch,
    MissingGroundTruth,
    MissingSet,
    ZeroNorm,
)
from hyface.evaluation import (
    SETS,
    BuiltinEmbedder,
    EvalEmbedding,
    EvalSet,
    FileEmbedder,
    aggregate_report,
    build_eval_sets,
    check_eval_set,
    consistency,
    consistency_scores,
    cosine_similarity,
    diversity,
    format_table,
    homogeneity,
    paired_t_test,
    pitch_deviation,
    random_pairing,
)

import oracles


def E(v, eid="builtin"):
    return EvalEmbedding(np.asarray(v, dtype=float), eid)


def fixture(rng, n_spk=5, n_emb=4, dim=6):
    return {f"s{i}": [E(rng.normal(size=dim)) for _ in range(n_emb)] for i in range(n_spk)}


def test_cosine_examples():
    assert cosine_similarity(E([1, 2, 3]), E([1, 2, 3])) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(E([1, 0]), E([0, 1])) == 0.0
    assert cosine_similarity(E([1, 1]), E([1, 0])) == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_errors():
    with pytest.raises(DimMismatch):
        cosine_similarity(E([1, 0]), E([1, 0, 0]))
    with pytest.raises(DimMismatch):
        cosine_similarity(E([1, 0], "a"), E([1, 0], "b"))
    with pytest.raises(ZeroNorm):
        E([0, 0])
    with pytest.raises(ZeroNorm):
        cosine_similarity(np.zeros(2), np.ones(2))


def test_cosine_matches_oracle(rng):
    for _ in range(50):
        a, b = rng.normal(size=16), rng.normal(size=16)
        assert cosine_similarity(E(a), E(b)) == pytest.approx(oracles.cos(a, b), abs=1e-12)


@pytest.mark.parametrize("n_spk,n_emb", [(2, 2), (3, 3), (5, 4), (4, 2)])
def test_metrics_match_brute_force(rng, n_spk, n_emb):
    per = fixture(rng, n_spk, n_emb)
    vec = oracles.vectors(per)
    assert homogeneity(per) == pytest.approx(oracles.brute_homogeneity(vec), abs=1e-12)
    assert diversity(per) == pytest.approx(oracles.brute_diversity(vec), abs=1e-12)
    gt = {k: [E(rng.normal(size=6)) for _ in range(2)] for k in per}
    gvec = oracles.vectors(gt)
    assert consistency(per, gt) == pytest.approx(oracles.brute_consistency(vec, gvec), abs=1e-12)
    scores, partners = consistency_scores(per, gt, "random_speaker", seed=3)
    assert np.mean(scores) == pytest.approx(oracles.brute_consistency(vec, gvec, partners), abs=1e-12)


def test_homogeneity_three_pairs():
    a, b, c = [1, 0, 0], [1, 1, 0], [0, 1, 1]
    expected = (oracles.cos(a, b) + oracles.cos(a, c) + oracles.cos(b, c)) / 3
    assert homogeneity({"x": [E(a), E(b), E(c)]}) == pytest.approx(expected, abs=1e-12)
    assert homogeneity({"x": [E([1, 2])] * 3, "y": [E([3, 1])] * 2}) == pytest.approx(1.0)


def test_homogeneity_averages_per_speaker_first():
    # speaker x: 3 embeddings (3 pairs, all 1.0); y: 2 orthogonal (1 pair, 0.0)
    per = {"x": [E([1, 0])] * 3, "y": [E([1, 0]), E([0, 1])]}
    assert homogeneity(per) == pytest.approx(0.5)


def test_diversity_counts_twelve_pairs(rng):
    per = fixture(rng, 3, 2)
    pairs = [(a, b) for s1, s2 in itertools.combinations(sorted(per), 2) for a in per[s1] for b in per[s2]]
    assert len(pairs) == 12
    assert diversity(per) == pytest.approx(np.mean([cosine_similarity(a, b) for a, b in pairs]), abs=1e-12)
    assert diversity({"a": [E([1, 0])], "b": [E([0, 1])]}) == 0.0


def test_metric_errors():
    with pytest.raises(InsufficientEmbeddings):
        homogeneity({"x": [E([1, 0])]})
    with pytest.raises(InsufficientSpeakers):
        diversity({"x": [E([1, 0]), E([0, 1])]})
    with pytest.raises(MissingGroundTruth):
        consistency({"x": [E([1, 0])]}, {"y": [E([1, 0])]})


def test_consistency_identity():
    per = {"x": [E([1, 2, 3])], "y": [E([3, 2, 1])]}
    assert consistency(per, {k: list(v) for k, v in per.items()}) == pytest.approx(1.0)


def test_random_pairing_never_self_pairs():
    spks = ["a", "b", "c"]
    for seed in range(200):
        out = random_pairing(spks * 3, spks, seed)
        assert all(s != p for s, p in zip(spks * 3, out))
    assert random_pairing(spks, spks, 7) == random_pairing(spks, spks, 7)
    with pytest.raises(InsufficientSpeakers):
        random_pairing(["a"], ["a"], 0)


def test_scale_invariance(rng):
    per = fixture(rng, 3, 3)
    gt = {k: [E(rng.normal(size=6))] for k in per}
    scaled = {k: [E(e.vector * float(rng.uniform(0.1, 10))) for e in v] for k, v in per.items()}
    assert homogeneity(scaled) == pytest.approx(homogeneity(per), abs=1e-12)
    assert diversity(scaled) == pytest.approx(diversity(per), abs=1e-12)
    assert consistency(scaled, gt) == pytest.approx(consistency(per, gt), abs=1e-12)


def test_pitch_deviation_examples():
    recs = [{"target_id": "t", "wav_path": ""}] * 2
    assert pitch_deviation(recs, {"t": 200.0}, synth_means=[210.0, 190.0]) == 10.0
    assert pitch_deviation(recs, {"t": 200.0}, synth_means=[200.0, 200.0]) == 0.0
    with pytest.raises(LengthMismatch):
        pitch_deviation(recs, {"t": 200.0}, synth_means=[200.0])


def test_pitch_deviation_from_audio(tmp_path, dsp):
    t = np.arange(16000) / 16000
    recs = []
    for i, f in enumerate((180.0, 230.0)):
        p = tmp_path / f"{i}.wav"
        write_wav(p, Waveform(0.5 * np.sin(2 * np.pi * f * t), 16000))
        recs.append({"target_id": "t", "wav_path": str(p)})
    assert pitch_deviation(recs, {"t": 200.0}, dsp) == pytest.approx(25.0, abs=0.5)


def test_paired_t_test_matches_scipy():
    a, b = [1, 2, 3, 4], [2, 2, 4, 5]
    t, p = paired_t_test(a, b)
    ref = stats.ttest_rel(a, b)
    assert t == pytest.approx(ref.statistic, abs=1e-6)
    assert p == pytest.approx(ref.pvalue, abs=1e-6)
    # textbook: d = [-1, 0, -1, -1], mean -0.75, sd 0.5 -> t = -3
    assert t == pytest.approx(-3.0, abs=1e-12)


def test_paired_t_test_degenerate():
    with pytest.raises(DegenerateVariance):
        paired_t_test([1, 2, 3], [1, 2, 3])
    with pytest.raises(DegenerateVariance):
        paired_t_test([1, 2, 3], [2, 3, 4])
    with pytest.raises(LengthMismatch):
        paired_t_test([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        paired_t_test([1], [2])


def test_aggregation_paper_values():
    rep = aggregate_report({"homogeneity": {"M2M": 0.6860, "F2F": 0.6680, "M2F": 0.6719, "F2M": 0.6867}})
    assert round(rep.aggregates["homogeneity"]["HMG"], 4) == 0.6770
    assert round(rep.aggregates["homogeneity"]["HTG"], 4) == 0.6793


def test_aggregation_identity_and_constant(rng):
    vals = {m: {s: float(rng.uniform()) for s in SETS} for m in ("homogeneity", "diversity")}
    rep = aggregate_report(vals)
    for m, per in rep.per_set.items():
        assert rep.aggregates[m]["HMG"] == (per["M2M"] + per["F2F"]) / 2
        assert rep.aggregates[m]["HTG"] == (per["M2F"] + per["F2M"]) / 2
    const = aggregate_report({"x": {s: 0.42 for s in SETS}})
    assert const.aggregates["x"] == {"HMG": 0.42, "HTG": 0.42}


def test_aggregation_missing_set():
    with pytest.raises(MissingSet):
        aggregate_report({"homogeneity": {"M2M": 0.5}})
    rep = aggregate_report({"homogeneity": {"M2M": 0.5, "F2F": 0.7}}, subset=True)
    assert rep.aggregates["homogeneity"] == {"HMG": pytest.approx(0.6)}


def test_pitch_deviation_section_has_four_sets():
    pd = {"M2M": 24.01, "F2F": 29.58, "M2F": 25.0, "F2M": 27.0}
    rep = aggregate_report({"pitch_deviation": pd})
    assert rep.pitch_deviation["per_set"] == pd
    assert "pitch_deviation" not in rep.aggregates
    assert rep.pitch_deviation["reference_stdv_hz"] == {"male": 29.18, "female": 37.50}
    table = format_table(rep)
    assert all(s in table for s in SETS) and "24.01" in table
    json.dumps(rep.to_dict())


def test_eval_sets():
    genders = {"a": "M", "b": "M", "c": "F", "d": "female", "x": "unknown"}
    pairs = [("a", "b", 0), ("c", "d", 0), ("a", "c", 1), ("d", "b", 0), ("x", "a", 0)]
    sets = build_eval_sets(pairs, genders)
    assert {k: len(v.pairs) for k, v in sets.items()} == {"M2M": 1, "F2F": 1, "M2F": 1, "F2M": 1}
    for es in sets.values():
        check_eval_set(es, genders)
    with pytest.raises(GenderMismatch):
        check_eval_set(EvalSet("M2M", [("a", "c", 0)]), genders)
    with pytest.raises(MissingSet):
        EvalSet("X2Y", [])


def test_builtin_embedder(dsp):
    t = np.arange(8000) / 16000
    emb = BuiltinEmbedder(dsp)
    a = emb.embed(Waveform(np.sin(2 * np.pi * 150 * t), 16000))
    b = emb.embed(Waveform(np.sin(2 * np.pi * 150 * t), 16000))
    assert a.vector.shape == (2 * dsp.n_mels,)
    assert np.linalg.norm(a.vector) == pytest.approx(1.0)
    assert np.array_equal(a.vector, b.vector)
    assert a.embedder_id == "builtin-melstats-v1"


def test_file_embedder(tmp_path):
    from hyface.content import write_feature_file

    write_feature_file(tmp_path / "spk" / "u1.bin", np.array([[1, 0, 0], [0, 1, 0]], dtype=np.float32))
    emb = FileEmbedder(tmp_path).embed(key="spk/u1")
    assert np.allclose(emb.vector, [0.5, 0.5, 0.0])
    with pytest.raises(MissingGroundTruth):
        FileEmbedder(tmp_path).embed()

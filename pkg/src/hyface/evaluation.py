"""Objective metrics over conversion results.

Homogeneity, diversity and consistency are cosine similarities between
speaker embeddings of audio; pitch deviation compares the voiced-mean F0 of
synthesized audio with the target speaker's cached average F0.  Per-set
values (M2M, F2F, M2F, F2M) are aggregated into HMG / HTG means.

Averaging order: homogeneity averages pairwise similarities within each
speaker first, then over speakers; diversity and consistency average over
all pairs directly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .audio_dsp import REFERENCE_STDV_FEMALE_HZ, REFERENCE_STDV_MALE_HZ, Waveform, compute_spectrograms, read_wav, voiced_mean_f0
from .config import DspConfig
from .content import read_feature_file
from .errors import (
    DegenerateVariance,
    DimMismatch,
    GenderMismatch,
    InsufficientEmbeddings,
    InsufficientSpeakers,
    LengthMismatch,
    MissingGroundTruth,
    MissingSet,
    NoVoicedFrames,
    ZeroNorm,
)

SETS = ("M2M", "F2F", "M2F", "F2M")
HMG = ("M2M", "F2F")
HTG = ("M2F", "F2M")
AVERAGING_NOTE = (
    "homogeneity: mean of pairwise cosine within each target speaker, then mean over speakers; "
    "diversity/consistency: mean over all pairs; pitch deviation: mean over records"
)


@dataclass
class EvalEmbedding:
    vector: np.ndarray
    embedder_id: str = "builtin"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()
        if not np.linalg.norm(self.vector) > 0:
            raise ZeroNorm("embedding has zero norm")


def _vec(e):
    return e.vector if isinstance(e, EvalEmbedding) else np.asarray(e, dtype=np.float64).ravel()


def cosine_similarity(a, b) -> float:
    if isinstance(a, EvalEmbedding) and isinstance(b, EvalEmbedding) and a.embedder_id != b.embedder_id:
        raise DimMismatch(f"embedders differ: {a.embedder_id} vs {b.embedder_id}")
    va, vb = _vec(a), _vec(b)
    if va.shape != vb.shape:
        raise DimMismatch(f"dims differ: {va.shape[0]} vs {vb.shape[0]}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ZeroNorm("cannot take cosine of a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def homogeneity(per_speaker) -> float:
    means = []
    for spk in sorted(per_speaker):
        embs = list(per_speaker[spk])
        if len(embs) < 2:
            raise InsufficientEmbeddings(spk, len(embs))
        sims = [cosine_similarity(a, b) for a, b in itertools.combinations(embs, 2)]
        means.append(float(np.mean(sims)))
    if not means:
        raise InsufficientSpeakers("no speakers")
    return float(np.mean(means))


def diversity(per_speaker) -> float:
    spks = sorted(per_speaker)
    if len(spks) < 2:
        raise InsufficientSpeakers(f"need >= 2 speakers, got {len(spks)}")
    sims = []
    for s1, s2 in itertools.combinations(spks, 2):
        for a in per_speaker[s1]:
            for b in per_speaker[s2]:
                sims.append(cosine_similarity(a, b))
    if not sims:
        raise InsufficientEmbeddings(spks[0], 0)
    return float(np.mean(sims))


def random_pairing(speakers, gt_speakers, seed: int):
    """Seeded partner for each entry of ``speakers``, never the speaker itself."""
    pool = sorted(gt_speakers)
    rng = np.random.default_rng(seed)
    out = []
    for spk in speakers:
        cands = [s for s in pool if s != spk]
        if not cands:
            raise InsufficientSpeakers("random pairing needs another speaker with ground truth")
        out.append(cands[int(rng.integers(len(cands)))])
    return out


def consistency_scores(synth, gt, pairing: str = "same_speaker", seed: int = 0):
    """Per-item scores for :func:`consistency`, in sorted-speaker order.

    ``synth`` maps target speaker -> synthesized embeddings, ``gt`` maps
    speaker -> ground-truth embedding(s).  Each synthesized embedding scores
    its mean cosine against the paired speaker's ground-truth embeddings.
    """
    items = [(spk, e) for spk in sorted(synth) for e in synth[spk]]
    for spk, _ in items:
        if spk not in gt:
            raise MissingGroundTruth(spk)
    if pairing == "same_speaker":
        partners = [spk for spk, _ in items]
    elif pairing == "random_speaker":
        partners = random_pairing([spk for spk, _ in items], gt, seed)
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    scores = []
    for (_, e), p in zip(items, partners):
        refs = gt[p] if isinstance(gt[p], (list, tuple)) else [gt[p]]
        scores.append(float(np.mean([cosine_similarity(e, r) for r in refs])))
    return scores, partners


def consistency(synth, gt, pairing: str = "same_speaker", seed: int = 0) -> float:
    scores, _ = consistency_scores(synth, gt, pairing, seed)
    return float(np.mean(scores))


def _target_avg(table, target):
    v = table[target]
    v = getattr(v, "avg_f0", v)
    return float(getattr(v, "avg_f0", v))


def synth_mean_f0(record, dsp: DspConfig = DspConfig()) -> float:
    path = record["wav_path"] if isinstance(record, dict) else record.wav_path
    try:
        return voiced_mean_f0(read_wav(path), dsp)
    except NoVoicedFrames:
        raise NoVoicedFrames(f"no voiced frames in {path}") from None


def pitch_deviation(records, speaker_table, dsp: DspConfig = DspConfig(), synth_means=None) -> float:
    """Mean |voiced-mean F0 of synthesized audio - target average F0| in Hz.

    ``synth_means`` (one per record) skips audio analysis when given.
    """
    records = list(records)
    if not records:
        raise LengthMismatch("no records")
    if synth_means is None:
        synth_means = [synth_mean_f0(r, dsp) for r in records]
    if len(synth_means) != len(records):
        raise LengthMismatch("one synthesized mean per record expected")
    devs = []
    for r, m in zip(records, synth_means):
        target = r["target_id"] if isinstance(r, dict) else r.target_id
        devs.append(abs(float(m) - _target_avg(speaker_table, target)))
    return float(np.mean(devs))


def paired_t_test(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"paired samples differ in length: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise LengthMismatch("need at least 2 pairs")
    d = a - b
    sd = d.std(ddof=1)
    if not sd > 0:
        raise DegenerateVariance("differences have zero variance")
    n = d.size
    t = d.mean() / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return float(t), float(p)


# -- evaluation sets -------------------------------------------------------

@dataclass
class EvalSet:
    name: str
    pairs: list

    def __post_init__(self):
        if self.name not in SETS:
            raise MissingSet(f"unknown set {self.name!r}")


def set_name(source_gender: str, target_gender: str) -> str | None:
    g = {"M": "M", "m": "M", "male": "M", "F": "F", "f": "F", "female": "F"}
    s, t = g.get(source_gender), g.get(target_gender)
    return f"{s}2{t}" if s and t else None


def build_eval_sets(pairs, genders):
    """Split ``(source, target, trial)`` pairs into M2M/F2F/M2F/F2M by gender.

    Pairs whose genders are unknown are dropped.
    """
    out = {}
    for p in pairs:
        src, tgt = p[0], p[1]
        name = set_name(genders.get(src, ""), genders.get(tgt, ""))
        if name is None:
            continue
        out.setdefault(name, EvalSet(name, [])).pairs.append(tuple(p))
    return out


def check_eval_set(es: EvalSet, genders):
    for p in es.pairs:
        if set_name(genders.get(p[0], ""), genders.get(p[1], "")) != es.name:
            raise GenderMismatch(f"pair {p} does not belong to {es.name}")


# -- report ----------------------------------------------------------------

@dataclass
class MetricsReport:
    per_set: dict
    aggregates: dict
    pitch_deviation: dict = field(default_factory=dict)
    t_tests: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _mean_of(values, names):
    return float(np.mean([values[n] for n in names]))


def aggregate_report(per_set_values, subset: bool = False, t_tests=None, provenance=None) -> MetricsReport:
    """Build a report from ``{metric: {set: value}}``.

    Every metric except ``pitch_deviation`` gets HMG/HTG means; pitch
    deviation is kept per set next to the reference gender spreads.  With
    ``subset`` missing sets are allowed and an aggregate is only emitted
    when both of its sets are present.
    """
    per_set, aggregates, pitch = {}, {}, {}
    for metric, values in sorted(per_set_values.items()):
        missing = [s for s in SETS if s not in values]
        if missing and not subset:
            raise MissingSet(f"{metric}: missing sets {missing}")
        values = {s: float(values[s]) for s in SETS if s in values}
        if metric == "pitch_deviation":
            pitch = dict(values)
            continue
        per_set[metric] = values
        agg = {}
        for label, names in (("HMG", HMG), ("HTG", HTG)):
            if all(n in values for n in names):
                agg[label] = _mean_of(values, names)
        aggregates[metric] = agg
    if pitch:
        pitch = {"per_set": pitch,
                 "reference_stdv_hz": {"male": REFERENCE_STDV_MALE_HZ, "female": REFERENCE_STDV_FEMALE_HZ}}
    return MetricsReport(
        per_set=per_set, aggregates=aggregates, pitch_deviation=pitch, t_tests=list(t_tests or []),
        provenance=dict(provenance or {}), notes={"averaging": AVERAGING_NOTE},
    )


def format_table(report: MetricsReport) -> str:
    """Plain-text rendering: metric x {HMG, HTG, sets}, then the pitch table."""
    cols = ["HMG", "HTG", *SETS]
    lines = ["metric".ljust(16) + "".join(c.rjust(9) for c in cols)]
    for metric, vals in report.per_set.items():
        row = {**report.aggregates.get(metric, {}), **vals}
        lines.append(metric.ljust(16) + "".join(f"{row[c]:9.4f}" if c in row else " " * 8 + "-" for c in cols))
    if report.pitch_deviation:
        lines.append("")
        lines.append("pitch_dev_hz".ljust(16) + "".join(s.rjust(9) for s in SETS))
        pv = report.pitch_deviation["per_set"]
        lines.append("".ljust(16) + "".join(f"{pv[s]:9.2f}" if s in pv else " " * 8 + "-" for s in SETS))
    return "\n".join(lines)


# -- embedders ---------------------------------------------------------------

class BuiltinEmbedder:
    """Per-mel-band mean and std of the log-mel spectrogram, L2-normalised."""

    embedder_id = "builtin-melstats-v1"

    def __init__(self, dsp: DspConfig = DspConfig()):
        self.dsp = dsp

    def embed(self, wav: Waveform, key=None) -> EvalEmbedding:
        _, mel = compute_spectrograms(wav, self.dsp)
        m = mel.frames  # [n_frames, n_mels]
        v = np.concatenate([m.mean(axis=0), m.std(axis=0)])
        return EvalEmbedding(v / np.linalg.norm(v), self.embedder_id)


class FileEmbedder:
    """Externally computed embeddings at ``<root>/<key>.bin`` (feature-file layout).

    Multi-row files are averaged over rows.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.embedder_id = f"file:{self.root.name}"

    def embed(self, wav=None, key=None) -> EvalEmbedding:
        if key is None:
            raise MissingGroundTruth("file embedder needs a key")
        arr = read_feature_file(self.root / f"{key}.bin")
        return EvalEmbedding(arr.astype(np.float64).mean(axis=0), self.embedder_id)


def make_embedder(kind: str, dsp: DspConfig = DspConfig()):
    if kind == "builtin":
        return BuiltinEmbedder(dsp)
    if kind.startswith("file:"):
        return FileEmbedder(kind[5:])
    raise ValueError(f"unknown embedder {kind!r}")


def record_key(record) -> str:
    r = record if isinstance(record, dict) else asdict(record)
    return f"{r['target_id']}/{r['source_id']}_{r['trial']}"


# -- end-to-end ------------------------------------------------------------

def evaluate_results(records, cache, embedder, seed: int = 0, genders=None, subset: bool = True,
                     provenance=None, gt_splits=None) -> MetricsReport:
    """Compute every metric for each evaluation set present in ``records``.

    Ground-truth embeddings come from the cached audio of each target
    speaker (restricted to ``gt_splits`` if given).  A paired t-test of
    consistency(obj) vs consistency(rnd) is attached per set.
    """
    records = [r if isinstance(r, dict) else asdict(r) for r in records]
    genders = genders or {s: info.gender for s, info in cache.speakers.items()}
    synth_emb = [embedder.embed(read_wav(r["wav_path"]), key=record_key(r)) for r in records]
    gt = {}
    for spk, info in sorted(cache.speakers.items()):
        embs = []
        for e in info.entries:
            if gt_splits is not None and e.split not in gt_splits:
                continue
            u = cache.utterances[e.utt_id]
            embs.append(embedder.embed(Waveform(u.wav.astype(np.float64), cache.dsp.sample_rate), key=e.utt_id))
        if embs:
            gt[spk] = embs
    by_set = {}
    for i, r in enumerate(records):
        name = set_name(genders.get(r["source_id"], ""), genders.get(r["target_id"], ""))
        if name is not None:
            by_set.setdefault(name, []).append(i)
    values = {k: {} for k in ("homogeneity", "diversity", "consistency_obj", "consistency_rnd", "pitch_deviation")}
    tests = []
    for name, idx in sorted(by_set.items()):
        per_spk = {}
        for i in idx:
            per_spk.setdefault(records[i]["target_id"], []).append(synth_emb[i])
        try:
            values["homogeneity"][name] = homogeneity(per_spk)
        except InsufficientEmbeddings:
            pass
        if len(per_spk) >= 2:
            values["diversity"][name] = diversity(per_spk)
        obj, _ = consistency_scores(per_spk, gt, "same_speaker")
        values["consistency_obj"][name] = float(np.mean(obj))
        if len(gt) >= 2:
            rnd, _ = consistency_scores(per_spk, gt, "random_speaker", seed)
            values["consistency_rnd"][name] = float(np.mean(rnd))
            try:
                t, p = paired_t_test(obj, rnd)
                tests.append({"set": name, "a": "consistency_obj", "b": "consistency_rnd", "t": t, "p": p, "n": len(obj)})
            except (DegenerateVariance, LengthMismatch):
                pass
        sub = [records[i] for i in idx]
        values["pitch_deviation"][name] = pitch_deviation(sub, cache.speakers, cache.dsp)
    values = {k: v for k, v in values.items() if v}
    prov = {"embedder_id": embedder.embedder_id, "seed": seed, "n_records": len(records)}
    prov.update(provenance or {})
    return aggregate_report(values, subset=subset, t_tests=tests, provenance=prov)

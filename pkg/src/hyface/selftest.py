"""Fast invariant checks runnable on a fresh install (``hyface selftest``).

Each check returns ``(name, ok, detail)``; the whole suite runs in well
under a minute on one CPU core.
"""
from __future__ import annotations

import numpy as np
import torch

from .audio_dsp import F0Contour, Waveform, extract_f0, interior_frames, spectral_flatness
from .config import DspConfig, ModelConfig, RunConfig, dump_run_config, parse_run_config

TINY = ModelConfig(latent_dim=4, spk_dim=8, content_dim=8, hidden_dim=16, n_posterior_layers=2, n_prior_layers=1,
                   flow_layers=2, upsample_initial_channel=16, face_dim=16, face_layers=1, af_dim=16, af_layers=1,
                   disc_channels=4)


def perturb(module, scale=0.1, seed=0):
    """Add seeded noise to every parameter (turns zero-init couplings non-trivial)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return module


def flow_checks(flow, latent_dim, spk_dim, n_frames=4, seed=0):
    """``(max round-trip error, |log_det - slogdet(J)|)`` in float64."""
    flow = flow.double().eval()
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(1, latent_dim, n_frames, generator=g, dtype=torch.float64)
    s = torch.randn(1, spk_dim, generator=g, dtype=torch.float64)
    with torch.no_grad():
        zp, ld = flow(z, s)
        back = flow.inverse(zp, s)
    rt = float((back - z).abs().max())

    def f(flat):
        return flow(flat.reshape(z.shape), s)[0].reshape(-1)

    jac = torch.autograd.functional.jacobian(f, z.reshape(-1))
    _, logabs = torch.linalg.slogdet(jac)
    return rt, abs(float(ld[0]) - float(logabs))


def _check(name, fn):
    try:
        ok, detail = fn()
    except Exception as e:  # reported, not raised
        return name, False, f"{type(e).__name__}: {e}"
    return name, bool(ok), detail


def run_selftest(seed: int = 0):
    from .evaluation import EvalEmbedding, aggregate_report, cosine_similarity, homogeneity
    from .losses import kl_closed_form
    from .model import HYFaceVC
    from .model.flow import ResidualCouplingFlow

    torch.manual_seed(seed)
    dsp = DspConfig()
    rng = np.random.default_rng(seed)
    results = []

    def config_roundtrip():
        run = RunConfig(model=TINY, seed=seed)
        back = parse_run_config(dump_run_config(run))
        return back == run and back.content_hash() == run.content_hash(), run.content_hash()

    def flow_inv():
        flow = perturb(ResidualCouplingFlow(TINY), seed=seed)
        rt, ld = flow_checks(flow, TINY.latent_dim, TINY.spk_dim, seed=seed)
        return rt < 1e-4 and ld < 1e-3, f"roundtrip {rt:.2e}, logdet {ld:.2e}"

    def f0_sine():
        t = np.arange(16000) / 16000
        wav = Waveform(0.5 * np.sin(2 * np.pi * 200 * t), 16000)
        c = extract_f0(wav, dsp)
        idx = interior_frames(16000, dsp)
        err = 1200 * np.abs(np.log2(np.maximum(c.values[idx], 1e-9) / 200))
        frac = float(np.mean(c.voiced_mask[idx] & (err < 20)))
        silent = extract_f0(Waveform(np.zeros(16000), 16000), dsp)
        return frac >= 0.95 and not silent.voiced_mask.any(), f"{frac:.1%} within 20 cents"

    @torch.no_grad()
    def nsf():
        model = HYFaceVC(TINY, dsp)
        n = 50
        voiced = F0Contour(np.full(n, 200.0), np.ones(n, bool))
        src = model.decoder.source(torch.from_numpy(voiced.values).float()[None], torch.Generator().manual_seed(seed))
        x = src[0, 0].numpy().astype(np.float64)
        spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
        peak = np.argmax(spec) * 16000 / x.size
        unv = model.decoder.source(torch.zeros(1, n), torch.Generator().manual_seed(seed))[0, 0].numpy()
        flat = spectral_flatness(unv)
        bin_hz = 16000 / x.size
        return abs(peak - 200) <= bin_hz and flat > 0.5, f"peak {peak:.1f} Hz, flatness {flat:.2f}"

    def kl_nonneg():
        m = torch.from_numpy(rng.normal(size=(2, 4, 4)))
        ls = torch.from_numpy(rng.normal(scale=0.3, size=(2, 4, 4)))
        v = float(kl_closed_form(m, ls, m * 0.5, ls * 0.5))
        same = float(kl_closed_form(m, ls, m, ls))
        return v >= 0 and abs(same) < 1e-12, f"kl {v:.4f}"

    def metric_bruteforce():
        embs = {f"s{i}": [EvalEmbedding(rng.normal(size=6)) for _ in range(3)] for i in range(3)}
        brute = np.mean([np.mean([cosine_similarity(e[a], e[b]) for a in range(3) for b in range(a + 1, 3)])
                         for e in embs.values()])
        return homogeneity(embs) == brute, f"{brute:.6f}"

    def aggregation():
        rep = aggregate_report({"homogeneity": {"M2M": 0.6860, "F2F": 0.6680}}, subset=True)
        v = rep.aggregates["homogeneity"]["HMG"]
        return round(v, 4) == 0.6770, f"HMG {v:.4f}"

    def length_law():
        model = HYFaceVC(TINY, dsp).eval()
        bad = []
        for n in rng.integers(400, 4000, size=5):
            frames = int(n) // dsp.hop + 1
            with torch.no_grad():
                y = model.decoder(torch.zeros(1, TINY.latent_dim, frames), torch.full((1, frames), 150.0),
                                  torch.zeros(1, TINY.spk_dim))
            if y.shape[-1] != frames * dsp.hop:
                bad.append(int(n))
        return not bad, "ok" if not bad else f"bad lengths {bad}"

    for name, fn in [
        ("config_roundtrip", config_roundtrip),
        ("flow_invertibility", flow_inv),
        ("f0_extractor", f0_sine),
        ("nsf_excitation", nsf),
        ("kl_closed_form", kl_nonneg),
        ("metric_bruteforce", metric_bruteforce),
        ("aggregation", aggregation),
        ("output_length", length_law),
    ]:
        results.append(_check(name, fn))
    return results

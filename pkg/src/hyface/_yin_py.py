"""Pure numpy implementation of the YIN kernel.

Same contract as the compiled ``_yin_ext.yin_track``.  The difference
function is evaluated through FFT cross-correlation, so the two backends
agree to rounding error rather than bit-for-bit.
"""
import numpy as np


def _difference(frames, tau_max):
    n_frames, frame_len = frames.shape
    width = frame_len - tau_max
    nfft = 1 << int(np.ceil(np.log2(frame_len + width)))
    head = frames[:, :width]
    # r[t] = sum_j x[j] x[j + t] for j < width
    spec = np.fft.rfft(frames, nfft, axis=1) * np.conj(np.fft.rfft(head, nfft, axis=1))
    corr = np.fft.irfft(spec, nfft, axis=1)[:, : tau_max + 1]
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    e0 = sq[:, width][:, None]
    e_tau = sq[:, taus + width] - sq[:, taus]
    d = e0 + e_tau - 2.0 * corr
    d[:, 0] = 0.0
    return np.maximum(d, 0.0)


def _cmnd(d):
    taus = np.arange(d.shape[1])
    running = np.cumsum(d, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dn = np.where(running > 0.0, d * taus / running, 1.0)
    dn[:, 0] = 1.0
    return dn


def yin_track(frames, tau_min, tau_max, threshold, sample_rate, energy_floor):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    n_frames, frame_len = frames.shape
    width = frame_len - tau_max
    if width <= 0:
        raise ValueError("frame too short for tau_max")
    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    aper = np.ones(n_frames)
    energy = np.sum(frames[:, :width] ** 2, axis=1)
    active = np.flatnonzero(energy > energy_floor * width)
    if active.size == 0:
        return f0, voiced, aper
    dn = _cmnd(_difference(frames[active], tau_max))
    for row, i in enumerate(active):
        curve = dn[row]
        below = np.flatnonzero(curve[tau_min:tau_max] < threshold)
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 < tau_max and curve[tau + 1] < curve[tau]:
            tau += 1
        aper[i] = curve[tau]
        period = float(tau)
        if 0 < tau < tau_max:
            a, b, c = curve[tau - 1], curve[tau], curve[tau + 1]
            den = a - 2.0 * b + c
            if den > 0.0:
                period = tau + 0.5 * (a - c) / den
        f0[i] = sample_rate / period
        voiced[i] = True
    return f0, voiced, aper

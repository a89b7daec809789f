# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled YIN kernel: difference function, cumulative-mean normalisation,
absolute-threshold search and parabolic refinement, one frame at a time."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef double _refine(double[::1] dn, Py_ssize_t tau, Py_ssize_t tau_max) nogil:
    cdef double a, b, c, den
    if tau <= 0 or tau >= tau_max:
        return <double>tau
    a = dn[tau - 1]
    b = dn[tau]
    c = dn[tau + 1]
    den = a - 2.0 * b + c
    if den <= 0.0:
        return <double>tau
    return tau + 0.5 * (a - c) / den


def yin_track(double[:, ::1] frames, Py_ssize_t tau_min, Py_ssize_t tau_max,
              double threshold, double sample_rate, double energy_floor):
    """Run YIN on every row of ``frames``.

    Returns ``(f0, voiced, aperiodicity)``; ``f0`` is 0 where unvoiced.
    """
    cdef Py_ssize_t n_frames = frames.shape[0]
    cdef Py_ssize_t frame_len = frames.shape[1]
    cdef Py_ssize_t width = frame_len - tau_max
    if width <= 0:
        raise ValueError("frame too short for tau_max")
    f0_arr = np.zeros(n_frames, dtype=np.float64)
    voiced_arr = np.zeros(n_frames, dtype=np.uint8)
    aper_arr = np.ones(n_frames, dtype=np.float64)
    cdef double[::1] f0 = f0_arr
    cdef unsigned char[::1] voiced = voiced_arr
    cdef double[::1] aper = aper_arr
    cdef double[::1] d = np.zeros(tau_max + 1, dtype=np.float64)
    cdef double[::1] dn = np.ones(tau_max + 1, dtype=np.float64)
    cdef Py_ssize_t i, j, tau, best
    cdef double acc, diff, running, energy, period, a0, a1, a2, a3
    cdef const double* row

    with nogil:
        for i in range(n_frames):
            row = &frames[i, 0]
            energy = 0.0
            for j in range(width):
                energy = energy + row[j] * row[j]
            if energy <= energy_floor * width:
                continue
            d[0] = 0.0
            dn[0] = 1.0
            running = 0.0
            for tau in range(1, tau_max + 1):
                # four partial sums so the compiler can vectorise the reduction
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                j = 0
                while j + 4 <= width:
                    diff = row[j] - row[j + tau]
                    a0 = a0 + diff * diff
                    diff = row[j + 1] - row[j + 1 + tau]
                    a1 = a1 + diff * diff
                    diff = row[j + 2] - row[j + 2 + tau]
                    a2 = a2 + diff * diff
                    diff = row[j + 3] - row[j + 3 + tau]
                    a3 = a3 + diff * diff
                    j = j + 4
                while j < width:
                    diff = row[j] - row[j + tau]
                    a0 = a0 + diff * diff
                    j = j + 1
                acc = (a0 + a1) + (a2 + a3)
                d[tau] = acc
                running = running + acc
                if running > 0.0:
                    dn[tau] = acc * tau / running
                else:
                    dn[tau] = 1.0
            best = -1
            tau = tau_min
            while tau < tau_max:
                if dn[tau] < threshold:
                    while tau + 1 < tau_max and dn[tau + 1] < dn[tau]:
                        tau = tau + 1
                    best = tau
                    break
                tau = tau + 1
            if best < 0:
                continue
            aper[i] = dn[best]
            period = _refine(dn, best, tau_max)
            f0[i] = sample_rate / period
            voiced[i] = 1
    return f0_arr, voiced_arr.astype(bool), aper_arr

"""Compare the compiled YIN kernel with the numpy fallback.

Usage: python3 benchmarks/bench_yin.py [--seconds 5] [--repeat 5]
"""
import argparse
import time

import numpy as np

from hyface import _yin_py
from hyface.audio_dsp import frame_signal
from hyface.config import DspConfig

try:
    from hyface import _yin_ext
except ImportError:  # extension not built
    _yin_ext = None


def _frames(seconds, dsp, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * dsp.sample_rate)) / dsp.sample_rate
    f0 = 150 + 50 * np.sin(2 * np.pi * 0.5 * t)
    x = np.sin(2 * np.pi * np.cumsum(f0) / dsp.sample_rate) + 0.05 * rng.standard_normal(t.size)
    return np.ascontiguousarray(frame_signal(x, dsp.win, dsp.hop, dsp.win // 2), dtype=np.float64)


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--seconds", type=float, default=5.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    dsp = DspConfig()
    frames = _frames(args.seconds, dsp)
    tau_min = int(dsp.sample_rate // dsp.f0_ceil)
    tau_max = int(np.ceil(dsp.sample_rate / dsp.f0_floor))
    call = (frames, tau_min, tau_max, dsp.yin_threshold, float(dsp.sample_rate), 1e-10)

    t_py, out_py = _time(lambda: _yin_py.yin_track(*call), args.repeat)
    print(f"frames={frames.shape[0]}  audio={args.seconds:.1f}s")
    print(f"numpy   {1000 * t_py:8.2f} ms  ({1000 * t_py / args.seconds:6.2f} ms per audio second)")
    if _yin_ext is None:
        print("cython  not built")
        return
    t_cy, out_cy = _time(lambda: _yin_ext.yin_track(*call), args.repeat)
    print(f"cython  {1000 * t_cy:8.2f} ms  ({1000 * t_cy / args.seconds:6.2f} ms per audio second)")
    print(f"speedup {t_py / t_cy:.2f}x")
    same_voicing = np.array_equal(out_py[1], out_cy[1])
    dev = np.max(np.abs(out_py[0] - out_cy[0])) if same_voicing else float("nan")
    print(f"voicing identical: {same_voicing}  max |f0 diff| = {dev:.2e} Hz")


if __name__ == "__main__":
    main()

"""Time the numba and numpy variants of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

``--end-to-end`` also times a track + correct + analyze run in two
subprocesses, one with WOVENSEG_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from wovenseg import kernels
from wovenseg._accel import HAVE_NUMBA
from wovenseg.blur import build_kernel


def _inputs(rng):
    frame_a = rng.integers(0, 40, size=(256, 512), dtype=np.uint16)
    frame_b = rng.integers(0, 40, size=(256, 512), dtype=np.uint16)
    ua, ia = kernels._compact(frame_a)
    ub, ib = kernels._compact(frame_b)
    vol = np.repeat(rng.integers(0, 27, size=(60, 64, 128), dtype=np.uint16), 2, axis=2)
    img = rng.random((256, 512))
    w = build_kernel(1.5).weights.sum(axis=0)
    return {
        "joint_histogram": ((ia, ib, ua.size, ub.size), kernels.joint_histogram_numpy,
                            kernels.joint_histogram_numba),
        "face_contact_codes": ((vol,), kernels.face_contact_codes_numpy,
                               kernels.face_contact_codes_numba),
        "separable_convolve": ((img, w), kernels.separable_convolve_numpy,
                               kernels.separable_convolve_numba),
    }


def _same(x, y):
    if x.dtype.kind == "f":
        return np.allclose(x, y, rtol=0, atol=1e-12)
    return np.array_equal(np.sort(x, axis=None), np.sort(y, axis=None))


def bench(repeat):
    rng = np.random.default_rng(0)
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  agree")
    for name, (args, f_np, f_nb) in _inputs(rng).items():
        ref = f_np(*args)
        got = f_nb(*args)  # first call compiles
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat))
        print(f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>10.2f}  {_same(ref, got)}")


_E2E = """
import time
from wovenseg import synth, tracking, correction, volume
spec = synth.WeaveSpec(n_weft_layers=4, n_frames=120, frame_width=256, frame_height=192)
_, truth, man = synth.generate_weave(spec)
preds, _ = synth.inject_errors(truth, synth.ErrorSpec(fp_count=6, fn_gap_count=3, fn_gap_length=2))
cmap = synth.classes_with_injections(man.class_map, _)
for _ in range(2):  # first pass pays for JIT loading
    t = time.perf_counter()
    fixed, _ = correction.correct(tracking.track(preds, cmap))
    v = volume.assemble_volume(fixed, man)
    volume.contact_regions(v)
    volume.area_distribution(v)
print(f"{time.perf_counter() - t:.3f}")
"""


def end_to_end():
    for label, flag in (("numpy", "1"), ("numba", "0")):
        env = dict(os.environ, WOVENSEG_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _E2E], env=env, check=True,
                             capture_output=True, text=True).stdout
        print(f"end-to-end ({label}): {float(out):.3f} s")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    a = ap.parse_args()
    bench(a.repeat)
    if a.end_to_end:
        end_to_end()

"""Compare the compiled and numpy convolution kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Checks that both backends agree exactly, then times im2col, col2im and a
full conv3d forward/backward at the RGB encoder's stage shapes.
"""

import argparse
import importlib
import os
import timeit

import numpy as np

# (name, input shape, kernel (kt, kh, kw), stride) at 32x32 frames, T=8, batch 16, width 16
CASES = [
    ("stage3", (16, 3, 10, 34, 34), (3, 3, 3), (1, 2, 2)),
    ("stage4", (16, 16, 10, 18, 18), (3, 3, 3), (1, 2, 2)),
    ("stage5", (16, 32, 10, 10, 10), (3, 3, 3), (1, 2, 2)),
    ("flow2d", (128, 3, 1, 34, 34), (1, 3, 3), (1, 2, 2)),
]


def out_extent(shape, k, s):
    return tuple((e - kk) // ss + 1 for e, kk, ss in zip(shape[2:], k, s))


def bench_case(backends, shape, k, s, repeat):
    rng = np.random.default_rng(0)
    x = rng.normal(size=shape)
    To, Ho, Wo = out_extent(shape, k, s)
    args = (*k, *s, To, Ho, Wo)
    ref_cols = ref_img = None
    times = {}
    for name, (im2col, col2im) in backends.items():
        cols = im2col(x, *args)
        img = col2im(cols, x.shape, *args)
        if ref_cols is None:
            ref_cols, ref_img = cols, img
        elif not (np.array_equal(cols, ref_cols) and np.array_equal(img, ref_img)):
            raise SystemExit(f"backend {name} disagrees with the reference")
        t_i = min(timeit.repeat(lambda: im2col(x, *args), number=1, repeat=repeat))
        t_c = min(timeit.repeat(lambda: col2im(cols, x.shape, *args), number=1, repeat=repeat))
        times[name] = (t_i, t_c)
    return times


def bench_conv(repeat):
    """Full conv3d forward + backward with each backend patched in."""
    from mscl import kernels
    from mscl import tensor as tn

    rng = np.random.default_rng(1)
    xd = rng.normal(size=(16, 16, 8, 16, 16))
    wd = rng.normal(size=(32, 16, 3, 3, 3))
    out = {}
    saved = kernels.im2col3d, kernels.col2im3d
    try:
        for name in ("python", "compiled"):
            try:
                kernels.im2col3d, kernels.col2im3d = kernels.get_backend(name)
            except ImportError:
                continue

            def step():
                x = tn.Tensor(xd, requires_grad=True)
                w = tn.Tensor(wd, requires_grad=True)
                y = tn.conv3d(x, w, stride=(1, 2, 2), padding=1)
                tn.backward(tn.sum_(tn.mul(y, y)))

            out[name] = min(timeit.repeat(step, number=1, repeat=repeat))
    finally:
        kernels.im2col3d, kernels.col2im3d = saved
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    from mscl import _fallback

    backends = {"python": (_fallback.im2col3d, _fallback.col2im3d)}
    try:
        ext = importlib.import_module("mscl._kernels")
        backends["compiled"] = (ext.im2col3d, ext.col2im3d)
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"MSCL_PURE_PYTHON={os.environ.get('MSCL_PURE_PYTHON', '')!r}")
    print(f"{'case':8s} {'backend':9s} {'im2col ms':>10s} {'col2im ms':>10s}")
    for name, shape, k, s in CASES:
        times = bench_case(backends, shape, k, s, args.repeat)
        for b, (ti, tc) in times.items():
            print(f"{name:8s} {b:9s} {1e3 * ti:10.2f} {1e3 * tc:10.2f}")
        if len(times) == 2:
            py, cy = times["python"], times["compiled"]
            print(f"{name:8s} {'speedup':9s} {py[0] / cy[0]:9.2f}x {py[1] / cy[1]:9.2f}x")
    conv = bench_conv(args.repeat)
    for b, t in conv.items():
        print(f"conv3d fwd+bwd {b:9s} {1e3 * t:8.1f} ms")
    if len(conv) == 2:
        print(f"conv3d fwd+bwd speedup   {conv['python'] / conv['compiled']:.2f}x")


if __name__ == "__main__":
    main()

"""Compare the numba kernels against their pure-numpy twins.

Usage: ``python3 benchmarks/bench_kernels.py [--sizes 16 64 256] [--repeat 50]``

Times each hot kernel on square complex grids, then one coarse-to-fine
reconstruction with each kernel set swapped in. Results are checked for
agreement before timing.
"""

import argparse
import time

import numpy as np

from ksgdiffuse import _accel
from ksgdiffuse.denoiser import GaussianPriorDenoiser
from ksgdiffuse.kspace import make_cartesian_mask
from ksgdiffuse.phantom import gaussian_phantom, observe
from ksgdiffuse.sampler import SamplerConfig, c2f_reconstruct
from ksgdiffuse.schedule import new_cosine


def best_of(fn, repeat):
    fn()  # warm-up, includes jit compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n, seed=0):
    rng = np.random.default_rng(seed)
    shape = (n, n)
    y = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    eps = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    z = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    mask = rng.random(shape) < 0.3
    key = (0x1234, 0x5678, 1, 2, 3)
    return {
        "normals": lambda k: k.normals(2 * n * n, *key),
        "reverse_update": lambda k: k.reverse_update(y, eps, z, 1.05, 0.2, 0.1),
        "gaussian_eps": lambda k: k.gaussian_eps(y, eps, 0.7, 0.51, 1.0),
        "replace": lambda k: k.replace(y, eps, mask),
    }


def bench_reconstruct(kernels, repeat):
    ph = gaussian_phantom(32, 32, seed=0)
    mask = make_cartesian_mask(32, 32, 4, 0.08, seed=0)
    x_obs = observe(ph.ground_truth, mask)
    schedule = new_cosine(400)
    cfg = SamplerConfig(T=400, k=4, N=4, T_refine=10)
    denoiser = GaussianPriorDenoiser(ph.mu, 1.0)
    saved = _accel.KERNELS
    _accel.KERNELS = kernels
    try:
        return best_of(lambda: c2f_reconstruct(x_obs, mask, schedule, denoiser, cfg), repeat)
    finally:
        _accel.KERNELS = saved


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 256])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args(argv)

    if _accel.NUMBA_KERNELS is None:
        raise SystemExit("numba is not installed; nothing to compare")
    numpy_k, numba_k = _accel.NUMPY_KERNELS, _accel.NUMBA_KERNELS

    print(f"{'kernel':<16}{'size':>6}{'numpy us':>12}{'numba us':>12}{'ratio':>8}")
    for n in args.sizes:
        for name, call in kernel_cases(n).items():
            np.testing.assert_allclose(call(numba_k), call(numpy_k), rtol=1e-12, atol=1e-12)
            t_np = best_of(lambda: call(numpy_k), args.repeat)
            t_nb = best_of(lambda: call(numba_k), args.repeat)
            print(f"{name:<16}{n:>6}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>8.2f}")

    repeat = max(1, args.repeat // 10)
    t_np = bench_reconstruct(numpy_k, repeat)
    t_nb = bench_reconstruct(numba_k, repeat)
    print(f"\nreconstruct 32x32, T=400 k=4 N=4: numpy {t_np * 1e3:.1f} ms, numba {t_nb * 1e3:.1f} ms, "
          f"ratio {t_np / t_nb:.2f}")


if __name__ == "__main__":
    main()

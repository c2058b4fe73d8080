"""Compare the numba and pure-numpy kernel backends.

Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fewview import backend, kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up (includes JIT compilation for numba)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    n_rays, n_samples, res = 4096, 128, 64

    density = rng.uniform(0.0, 2.0, (res, res, res))
    color = rng.uniform(0.0, 1.0, (res, res, res, 3))
    bg = np.full(3, 0.5)
    bmin = np.full(3, -1.5)
    scale = np.full(3, (res - 1) / 3.0)
    origins = np.tile(np.array([0.0, 0.0, -4.0]), (n_rays, 1))
    dirs = rng.normal(size=(n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[:, 2] = np.abs(dirs[:, 2])
    near = np.full(n_rays, 2.0)
    far = np.full(n_rays, 6.0)
    upstream = rng.normal(size=(n_rays, 3))

    fwd_args = (density, color, bg, bmin, scale, origins, dirs, near, far, n_samples)
    bwd_args = fwd_args + (upstream,)

    rows = [("render_rays_fwd", kernels._render_rays_fwd_np, fwd_args,
             getattr(kernels, "_render_rays_fwd_nb", None)),
            ("render_rays_bwd", kernels._render_rays_bwd_np, bwd_args,
             getattr(kernels, "_render_rays_bwd_nb", None))]

    print(f"{n_rays} rays x {n_samples} samples, {res}^3 grid "
          f"(numba available: {backend.HAVE_NUMBA})")
    for name, np_fn, args, nb_fn in rows:
        t_np = timeit(np_fn, *args)
        line = f"{name:18s} numpy {t_np * 1e3:8.2f} ms"
        if backend.HAVE_NUMBA and nb_fn is not None:
            t_nb = timeit(nb_fn, *args)
            line += f"   numba {t_nb * 1e3:8.2f} ms   speedup {t_np / t_nb:5.1f}x"
        print(line)


if __name__ == "__main__":
    main()

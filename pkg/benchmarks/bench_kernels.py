"""
Numba vs numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once per backend before timing so JIT compilation is not
counted. Outputs of the two backends are compared as a sanity check.
"""
import argparse
import timeit

import numpy as np

from reskit import _accel, kernels
from reskit.sigmodel import GridSpec, ResonatorParams, beta_for_a_n0, nonlinear_z_trace


def cases():
    p = ResonatorParams(a=0.9, alpha=0.3, tau=0.0, phi=0.1, q_l=5e4, q_c=8e4, f_r0=5e9, beta=0.0)
    p = p.with_(beta=beta_for_a_n0(0.5, p.a, p.q_l, p.q_c))
    f = GridSpec(n_points=2001, span_linewidths=12).frequencies(p)
    z = nonlinear_z_trace(p, f)
    rng = np.random.default_rng(0)

    detune = np.linspace(-6.0, 6.0, 20_001) / p.q_l
    noisy = np.cumsum(rng.normal(size=200_000))
    phase = np.angle(np.exp(1j * np.cumsum(rng.normal(0, 0.5, 200_000))))
    base = np.array([p.a, p.alpha, p.q_l, p.q_c, p.f_r0, p.beta])
    draws = base * (1 + 1e-3 * rng.standard_normal((4096, 6)))

    return {
        "energy_branch (20k pts)": lambda: kernels.energy_branch(detune, 1.5, p.q_l),
        "gaussian_filter (200k pts)": lambda: kernels.gaussian_filter(noisy, 3.0),
        "unwrap_thresholds (200k pts)": lambda: kernels.unwrap_thresholds(phase, 1.5 * np.pi, 0.5 * np.pi),
        "nonlin_stats (4096 draws x 2001 pts)": lambda: kernels.nonlin_stats(draws, f, z, 1e-13),
    }


def run(fn, use_numba, repeat):
    _accel.USE_NUMBA = use_numba
    out = fn()  # warm-up, compiles on first numba call
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return best, out


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-9, atol=1e-12, equal_nan=True) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not available (or RESKIT_NO_NUMBA is set); nothing to compare")

    print(f"{'kernel':<40}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  match")
    for name, fn in cases().items():
        t_np, out_np = run(fn, False, args.repeat)
        t_nb, out_nb = run(fn, True, args.repeat)
        print(f"{name:<40}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x  {_same(out_np, out_nb)}")
    _accel.USE_NUMBA = _accel.HAVE_NUMBA


if __name__ == "__main__":
    main()

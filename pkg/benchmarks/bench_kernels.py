"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--duration S]

Both backends integrate the same 4-generator / 2-IBR desk run (process
noise plus one IBR forced oscillation) and run the z-score peak filter
on a 40 s spectrum; outputs are checked to agree before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from folocate import _backend, _kernels_py
from folocate.desk import desk_model
from folocate.simulator import FoInjection, Scenario, _injection_arrays, process_sigma


def em_args(duration: float, substeps: int = 10):
    model = desk_model()
    sc = Scenario(injections=(FoInjection("ibr0", "ibr_vq", 0.614, 0.0222),), duration=duration,
                  seed=1, process_noise_snr_db=50.0)
    n = sc.n_samples
    rng = np.random.default_rng(0)
    sigma, vq_sigma = process_sigma(model, sc)
    m = model.inertia
    return (
        np.ascontiguousarray(model.coupling.entries / m[:, None]),
        np.ascontiguousarray(model.damping / m),
        np.ascontiguousarray(1.0 / m),
        np.ascontiguousarray(sigma / m),
        np.ascontiguousarray(model.vq_matrix),
        np.ascontiguousarray(model.k_pllp, dtype=float),
        np.ascontiguousarray(model.k_plli, dtype=float),
        np.ascontiguousarray(model.power_matrix, dtype=float),
        *_injection_arrays(sc.injections, model),
        np.zeros(2 * model.n_gen + 2 * model.n_ibr),
        sc.dt / substeps, substeps, n,
        rng.standard_normal(((n - 1) * substeps, model.n_gen)),
        rng.standard_normal((n, model.n_ibr)) * vq_sigma,
    )


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--duration", type=float, default=40.0, help="simulated seconds per integration")
    args = ap.parse_args(argv)

    if _backend.BACKEND != "cython":
        print("compiled kernels not built; run `python setup.py build_ext --inplace` first")
        return 1
    fast = _backend.kernels

    em = em_args(args.duration)
    ref, _ = _kernels_py.run_em(*em)
    got, _ = fast.run_em(*em)
    assert np.allclose(np.asarray(got), ref, rtol=1e-10, atol=1e-13)

    rng = np.random.default_rng(1)
    spectrum = np.abs(rng.standard_normal(1201))
    spectrum[[48, 300, 700]] += 8.0
    zs = (spectrum, 50, 1.0, 0.0)
    assert np.array_equal(np.asarray(fast.zscore_signals(*zs)), _kernels_py.zscore_signals(*zs))

    rows = []
    for name, py, cy, a in (("run_em", _kernels_py.run_em, fast.run_em, em),
                            ("zscore_signals", _kernels_py.zscore_signals, fast.zscore_signals, zs)):
        t_py = best_of(lambda: py(*a), args.repeat)
        t_cy = best_of(lambda: cy(*a), max(args.repeat, 10))
        rows.append((name, t_py, t_cy))

    print(f"{'kernel':<16}{'python [ms]':>14}{'cython [ms]':>14}{'speed-up':>11}")
    for name, t_py, t_cy in rows:
        print(f"{name:<16}{t_py * 1e3:>14.2f}{t_cy * 1e3:>14.3f}{t_py / t_cy:>10.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Compare the compiled kernels with the pure-Python fallback.

Times the SME integrator and the particle filter on both backends and
checks that they produce the same numbers. Run from the repository root::

    python3 benchmarks/bench_kernels.py --dims 40 80 120 --steps 400
"""

import argparse
import math
import time

import numpy as np

from qtrack import _core
from qtrack.classical import run_particle_filter
from qtrack.params import ModelParams
from qtrack.quantum import KrausIntegrator, MeasurementRecord, SMEOperators


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_sme(dim, steps, repeats):
    params = ModelParams(kbt=1.0, dim=dim)
    ops = SMEOperators.from_params(params)
    rng = np.random.default_rng(dim)
    dw = rng.standard_normal(steps) * math.sqrt(params.dt)
    rho0 = np.eye(dim, dtype=complex) / dim
    rows = {}
    for backend in ("python", "compiled"):
        integ = KrausIntegrator(ops, backend)
        rows[backend] = best_of(lambda: integ.run(rho0, dw, given_dy=False), repeats)
    diff = float(np.max(np.abs(rows["python"][1].rho - rows["compiled"][1].rho)))
    return {b: t / steps for b, (t, _) in rows.items()}, diff


def bench_pf(particles, steps, repeats):
    params = ModelParams(kbt=1.0)
    rng = np.random.default_rng(particles)
    record = MeasurementRecord(params.dt, rng.standard_normal(steps) * math.sqrt(params.dt))
    rows = {
        b: best_of(lambda: run_particle_filter(record, params, particles, seed=1, backend=b), repeats)
        for b in ("python", "compiled")
    }
    diff = float(np.max(np.abs(rows["python"][1].mean_x - rows["compiled"][1].mean_x)))
    return {b: t / steps for b, (t, _) in rows.items()}, diff


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--dims", type=int, nargs="+", default=[40, 80, 120], help="Fock truncations")
    parser.add_argument("--particles", type=int, nargs="+", default=[1000, 10000], help="ensemble sizes")
    parser.add_argument("--steps", type=int, default=400, help="integration steps per timing")
    parser.add_argument("--repeats", type=int, default=3, help="timings per case; the best is reported")
    args = parser.parse_args(argv)

    if not _core.compiled_available():
        parser.exit(1, "compiled kernels are not built; run `pip install --no-build-isolation -e .`\n")

    print(f"{'case':<22}{'python us/step':>16}{'compiled us/step':>18}{'speed-up':>10}{'max |diff|':>12}")
    for dim in args.dims:
        per, diff = bench_sme(dim, args.steps, args.repeats)
        print(f"{'SME dim=' + str(dim):<22}{per['python'] * 1e6:>16.1f}{per['compiled'] * 1e6:>18.1f}"
              f"{per['python'] / per['compiled']:>10.1f}{diff:>12.1e}")
    for n in args.particles:
        per, diff = bench_pf(n, args.steps, args.repeats)
        print(f"{'filter N=' + str(n):<22}{per['python'] * 1e6:>16.1f}{per['compiled'] * 1e6:>18.1f}"
              f"{per['python'] / per['compiled']:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()

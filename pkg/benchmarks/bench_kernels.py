"""Time the numba kernels against their numpy twins and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both paths are called through the dispatch functions with ``use_numba``
forced, so the environment flag does not matter here. The first numba call
(JIT compile or cache load) is excluded from the timings.
"""

import argparse
import statistics
import time
from importlib import resources

import numpy as np

from leocov import kernels
from leocov.control import CondensedQP, ControlParams
from leocov.orbit import cw_discrete
from leocov.scenario import load_script


def _time(fn, repeat):
    fn()
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return statistics.median(out)


def bench_quadrature(script, repeat):
    cfg = script.initial_configuration()
    c, a, s = cfg.arrays()
    lo = float(np.min(c - a))
    quad = script.planner.quad
    args = (lo, lo + 2 * np.pi, c, a, s, script.demand.arrays, quad.n_tau, quad.gl)
    vals = {}
    times = {}
    for nb in (True, False):
        vals[nb] = kernels.arc_quadrature(*args, use_numba=nb)
        times[nb] = _time(lambda: kernels.arc_quadrature(*args, use_numba=nb), repeat)
    return "arc_quadrature (n=25, full circle)", times, abs(vals[True] - vals[False])


def bench_apg(script, repeat):
    ctl = ControlParams()
    qp = CondensedQP.build(cw_discrete(script.orbit, ctl.dt), ctl.Q_aug, ctl.R, ctl.N)
    q0 = np.array([0.0, 0.0, 0.0, 0.0])
    q_target = np.array([-0.002, 0.15, 0.0, 0.0])
    g = qp.linear_term(q0, q_target)
    U0 = np.zeros_like(g)
    vals = {}
    times = {}
    for nb in (True, False):
        vals[nb] = kernels.apg_ball_qp(qp.H, g, ctl.u_max, U0, qp.L, 2000, 1e-10, use_numba=nb)[0]
        times[nb] = _time(lambda: kernels.apg_ball_qp(qp.H, g, ctl.u_max, U0, qp.L, 2000, 1e-10,
                                                      use_numba=nb), repeat)
    return "apg_ball_qp (N=30, 2000 it cap)", times, float(np.max(np.abs(vals[True] - vals[False])))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    path = resources.files("leocov") / "scenarios" / "cyber_full_recovery.json"
    script = load_script(path)
    print(f"{'kernel':40s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for bench in (bench_quadrature, bench_apg):
        name, t, diff = bench(script, args.repeat)
        print(f"{name:40s} {1e3 * t[True]:11.3f} {1e3 * t[False]:11.3f} "
              f"{t[False] / t[True]:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()

"""Benchmark the compiled kernels against their plain-numpy references.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

The dispatching wrappers in kvil._accel pick a backend at import time
(KVIL_NUMBA=0 forces numpy), so this script times the reference
implementations directly against whatever the wrappers dispatch to, and
checks that both paths agree on the same inputs.
"""

import time

import numpy as np

from kvil import _accel
from kvil.geometry import rotvec_to_matrix
from kvil.manifolds import _clamped_knots


def _bench(fn, *args, repeat: int = 5, warmup: int = 1):
    for _ in range(warmup):
        out = fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _row(name, t_ref, t_disp, agree):
    speedup = t_ref / t_disp if t_disp > 0 else float("inf")
    print(f"{name:<18} {t_ref * 1e3:>10.2f} {t_disp * 1e3:>10.2f} "
          f"{speedup:>8.1f}x {agree:>12.2e}")


def bench_eta_sweep(rng):
    local = rng.normal(size=(8, 64, 40, 6, 3))
    ref = lambda: _accel.eta_sweep_numpy(local, 1.0)
    disp = lambda: _accel.eta_sweep(local, 1.0)
    t_ref, out_ref = _bench(ref)
    t_disp, out_disp = _bench(disp)
    _row("eta_sweep", t_ref, t_disp, np.abs(out_ref - out_disp).max())


def bench_bspline(rng):
    knots = _clamped_knots(0.0, 1.0, 10, 3)
    u = rng.uniform(0.0, 1.0, 20000)
    for deriv in (0, 2):
        ref = lambda: _accel.bspline_design3_numpy(u, knots, deriv)
        disp = lambda: _accel.bspline_design3(u, knots, deriv)
        t_ref, out_ref = _bench(ref)
        t_disp, out_disp = _bench(disp)
        _row(f"bspline_design3/{deriv}", t_ref, t_disp,
             np.abs(out_ref - out_disp).max())


def bench_rollout(rng):
    steps, n_kp = 4000, 3
    att = rng.normal(scale=0.2, size=(n_kp, 3))
    base = rng.normal(size=3)
    tau = np.linspace(0.0, 1.0, steps)[:, None, None]
    targets = base + att * (1.0 - tau) + 0.05 * np.sin(
        6.28 * tau + rng.uniform(0, 6.28, (1, n_kp, 1)))
    dt = 1.0 / steps
    target_dot = np.zeros_like(targets)
    target_dot[1:] = (targets[1:] - targets[:-1]) / dt
    p0 = base + rng.normal(scale=0.05, size=3)
    R0 = rotvec_to_matrix(rng.normal(scale=0.2, size=3))
    kp_bar = np.full(n_kp, 600.0)
    kd_bar = np.full(n_kp, 49.0)
    args = (att, targets, target_dot, p0, R0, kp_bar, kd_bar,
            0.0, 0.0, 0.0, 0.0, 0.0, dt)
    ref = lambda: _accel.kac_rollout_p2p_numpy(*args)
    disp = lambda: _accel.kac_rollout_p2p(*args)
    t_ref, out_ref = _bench(ref)
    t_disp, out_disp = _bench(disp)
    agree = max(np.abs(np.asarray(a) - np.asarray(b)).max()
                for a, b in zip(out_ref[:4], out_disp[:4]))
    _row("kac_rollout_p2p", t_ref, t_disp, agree)


def main():
    rng = np.random.default_rng(0)
    print(f"backend: {_accel.backend()}")
    print(f"{'kernel':<18} {'numpy ms':>10} {'dispatch ms':>10} "
          f"{'speedup':>9} {'max |diff|':>12}")
    bench_eta_sweep(rng)
    bench_bspline(rng)
    bench_rollout(rng)


if __name__ == "__main__":
    main()

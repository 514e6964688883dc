"""Numba kernels vs the pure-numpy fallback.

Times each dispatcher in ``hybridpinn._kernels`` on both paths, plus one
full loss-and-gradient evaluation, and checks the two paths agree.

    python benchmarks/bench_kernels.py [--points 4000] [--width 64] [--repeats 5]
"""
import argparse
import time

import numpy as np

from hybridpinn import _kernels, loss, network, physics, sampling, scaling
from hybridpinn.autodiff.jet import jet_backward, jet_forward


def best_of(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def with_path(use_numba, fn):
    saved = _kernels.USE_NUMBA
    _kernels.USE_NUMBA = use_numba
    try:
        return fn()
    finally:
        _kernels.USE_NUMBA = saved


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out if o is not None])
    return np.ravel(out)


def cases(n, width):
    rng = np.random.default_rng(0)
    spec = network.NetworkSpec(4, (width, width, width), seed=0)
    p = network.init(spec)
    x = rng.uniform(-1, 1, (n, 4))
    hd = (0, 1, 2)

    def jet():
        return jet_forward(p.weights, p.biases, x, order=2, hess_dims=hd)[0]

    def jet_grad():
        out, cache = jet_forward(p.weights, p.biases, x, order=2, hess_dims=hd, keep=True)
        gw, gb = jet_backward(p.weights, cache, np.ones_like(out))
        return tuple(gw) + tuple(gb)

    field = rng.uniform(300, 2500, (161, 41))
    px = rng.uniform(0, 0.04, 20 * n)
    py = rng.uniform(0, 0.01, 20 * n)

    def bilinear():
        return _kernels.bilinear(field, (0.0, 0.0), (0.25e-3, 0.25e-3), px, py)

    frame = rng.uniform(300, 2500, (480, 640))
    frame[rng.uniform(size=frame.shape) < 0.1] = np.nan

    def block():
        return _kernels.block_mean(frame, 8)

    dom = physics.DomainSpec("box", (0.01, 0.005, 0.003), 0.5)
    las = physics.LaserSpec.bidirectional(300.0, 1.5e-3, (0.002, 0.0025), (0.008, 0.0025), 0.012)
    phys = physics.PhysicalParams(8000.0, physics.PropertyModel.constant(500.0),
                                  physics.PropertyModel.constant(10.0), 20.0, 0.3, 0.4)
    cfg = sampling.SamplingConfig(dt=0.1, coarse_spacing=1e-3, fine_window=3e-3, fine_spacing=0.5e-3)
    col = sampling.build_collocation(dom, las, cfg, 298.0)
    prob = loss.HeatProblem(dom, phys, las, scaling.ScalingSpec(dom.lengths, dom.t_end))

    def loss_grad():
        bd, g = loss.assemble_with_grad(p, col, prob)
        return g

    return [("jet forward (order 2)", jet), ("jet forward+backward", jet_grad),
            ("bilinear sampling", bilinear), ("block mean 480x640 /8", block),
            (f"loss+gradient, {col.N_r + col.N_b + col.N_i} points", loss_grad)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=4000)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.USE_NUMBA:
        print("numba unavailable or disabled (HYBRIDPINN_NO_NUMBA); nothing to compare")
        return
    print(f"{'kernel':38s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  max|diff|")
    for name, fn in cases(args.points, args.width):
        with_path(True, fn)  # compile / warm caches
        t_nb, out_nb = with_path(True, lambda: best_of(fn, args.repeats))
        t_np, out_np = with_path(False, lambda: best_of(fn, args.repeats))
        a, b = _flat(out_nb), _flat(out_np)
        both = ~(np.isnan(a) & np.isnan(b))
        diff = float(np.max(np.abs(a[both] - b[both]))) if both.any() else 0.0
        print(f"{name:38s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.2f}  {diff:.2e}")


if __name__ == "__main__":
    main()

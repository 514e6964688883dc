"""Weighted PINN loss: boundary, initial, residual and data terms."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import physics
from .autodiff import tape
from .autodiff.engine import value_and_param_gradient
from .errors import DomainError, NumericalError, StructuralError
from .scaling import ScalingSpec, physical_derivs

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "HeatProblem",
    "assemble",
    "assemble_with_grad",
    "weighted_total",
]


@dataclass(frozen=True)
class LossWeights:
    w_b: float = 1.0
    w_i: float = 1.0
    w_r: float = 1.0
    w_d: float = 1.0

    def __post_init__(self):
        ws = (self.w_b, self.w_i, self.w_r, self.w_d)
        if any(not (w >= 0) for w in ws):
            raise DomainError("loss weights must be >= 0")
        if not any(w > 0 for w in ws):
            raise DomainError("at least one loss weight must be > 0")


@dataclass(frozen=True)
class LossBreakdown:
    L_b: float
    L_i: float
    L_r: float
    L_d: float
    total: float
    N_b: int
    N_i: int
    N_r: int
    N_d: int


def weighted_total(weights, L_b, L_i, L_r, L_d):
    """The one summation order used everywhere."""
    return weights.w_b * L_b + weights.w_i * L_i + weights.w_r * L_r + weights.w_d * L_d


@dataclass
class HeatProblem:
    """Everything the loss needs besides the network and the points.

    ``top_edge`` applies to walls: ``"flux"`` imposes the laser/convection/
    radiation condition on the top edge, ``"data"`` leaves it to measured data.
    ``flux_scale`` and ``residual_scale`` default to 2*eta*P/(pi r^2) and
    rho*cp(T0)*delta_T/t_end.
    """

    domain: physics.DomainSpec
    phys: physics.PhysicalParams
    laser: physics.LaserSpec | None
    scaling: ScalingSpec
    top_edge: str = "flux"
    flux_scale: float | None = None
    residual_scale: float | None = None
    workers: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.top_edge not in ("flux", "data"):
            raise StructuralError(f"unknown top_edge mode {self.top_edge!r}")

    @property
    def q_ref(self):
        if self.flux_scale is not None:
            return float(self.flux_scale)
        las = self.laser
        eta = float(tape.value_of(self.phys.absorptivity))
        if las is not None and las.power > 0 and eta > 0:
            return 2.0 * eta * las.power / (math.pi * las.beam_radius ** 2)
        return self.phys.k.at(self.phys.T0) * self.scaling.delta_T / max(self.domain.lengths)

    @property
    def r_ref(self):
        if self.residual_scale is not None:
            return float(self.residual_scale)
        return self.phys.rho * self.phys.cp.at(self.phys.T0) * self.scaling.delta_T / self.domain.t_end

    def boundary_surfaces(self):
        surf = list(physics.SURFACES[self.domain.mode])
        if self.domain.mode == "wall" and self.top_edge == "data":
            surf.remove("ymax")
        return tuple(surf)

    def scaled(self, key, pts, t):
        # scaled inputs are reused every epoch
        hit = self._cache.get(key)
        if hit is not None and hit[0] is pts and hit[1] is t:
            return hit[2]
        x = self.scaling.scale_points(pts, t)
        self._cache[key] = (pts, t, x)
        return x


def _effective_phys(problem, tp):
    if tp is None:
        return problem.phys
    mu = {}
    for name in tp.params.mu_names:
        mu[name] = tp.mu(name)
    return problem.phys.with_values(**mu) if mu else problem.phys


def _check_finite(res, pts, t, category):
    v = tape.value_of(res)
    bad = ~np.isfinite(v)
    if np.any(bad):
        i = int(np.flatnonzero(np.broadcast_to(bad, np.shape(t)))[0])
        raise NumericalError(f"non-finite {category} residual at sample {i}",
                             point=(*np.atleast_2d(pts)[i], float(t[i])), category=category)


def _sum_sq(res):
    if isinstance(res, tape.Var):
        return (res * res).sum()
    return np.sum(res * res)


def _interior(tp, colloc, problem, phys):
    if colloc.N_r == 0:
        return 0.0
    sc = problem.scaling
    x = problem.scaled("interior", colloc.interior_pts, colloc.interior_t)
    J = tp.jet(x, order=2, hess_dims=tuple(range(sc.n_spatial)))
    dv = physical_derivs(J, sc)
    mode = problem.domain.mode
    if mode == "box":
        r = physics.pde_residual_3d(dv, phys)
    elif mode == "wall":
        r = physics.pde_residual_thinwall(dv, phys, problem.domain)
    else:
        src = 0.0
        if problem.laser is not None and problem.laser.segments:
            src = physics.rod_source(colloc.interior_pts[:, 0], colloc.interior_t, problem.laser,
                                     problem.domain, phys.absorptivity)
        r = physics.pde_residual_rod(dv, phys, src)
    r = r * (1.0 / problem.r_ref)
    _check_finite(r, colloc.interior_pts, colloc.interior_t, "interior")
    return _sum_sq(r) * (1.0 / colloc.N_r)


def _boundary(tp, colloc, problem, phys):
    used = problem.boundary_surfaces()
    groups = [(s, idx) for s, idx in colloc.boundary_groups().items() if s in used]
    n = sum(idx.size for _, idx in groups)
    if n == 0:
        return 0.0, 0
    sc = problem.scaling
    x_all = problem.scaled("boundary", colloc.boundary_pts, colloc.boundary_t)
    dom = problem.domain
    acc = None
    for sid, idx in groups:
        pts = colloc.boundary_pts[idx]
        t = colloc.boundary_t[idx]
        J = tp.jet(x_all[idx], order=1)
        dv = physical_derivs(J, sc, with_second=False)
        r = physics.boundary_residual(pts, t, dv, phys, problem.laser, sid, dom,
                                      laser_on_top=True)
        dirichlet = dom.mode == "rod" or (dom.mode == "box" and sid == "zmin"
                                          and dom.base_bc == "dirichlet")
        r = r * (1.0 / (sc.delta_T if dirichlet else problem.q_ref))
        _check_finite(r, pts, t, f"boundary:{sid}")
        s = _sum_sq(r)
        acc = s if acc is None else acc + s
    return acc * (1.0 / n), n


def _initial(tp, colloc, problem):
    if colloc.N_i == 0:
        return 0.0
    sc = problem.scaling
    t = np.zeros(colloc.N_i)
    x = problem.scaled("initial", colloc.initial_pts, t)
    J = tp.jet(x, order=0)
    r = J[0] - sc.scale_temperature(colloc.initial_T)
    _check_finite(r, colloc.initial_pts, t, "initial")
    return _sum_sq(r) * (1.0 / colloc.N_i)


def _data(tp, colloc, problem):
    d = colloc.data
    if len(d) == 0:
        return 0.0
    sc = problem.scaling
    x = problem.scaled("data", d.pts, d.t)
    J = tp.jet(x, order=0)
    r = J[0] - sc.scale_temperature(d.T)
    _check_finite(r, d.pts, d.t, "data")
    if np.all(d.weight == 1.0):
        s = _sum_sq(r)
    else:
        s = (r * r * d.weight).sum()
    return s * (1.0 / len(d))


def _terms(tp, colloc, problem):
    phys = _effective_phys(problem, tp)
    jobs = [
        lambda: _boundary(tp, colloc, problem, phys),
        lambda: _initial(tp, colloc, problem),
        lambda: _interior(tp, colloc, problem, phys),
        lambda: _data(tp, colloc, problem),
    ]
    if problem.workers > 1:
        with ThreadPoolExecutor(max_workers=problem.workers) as ex:
            futures = [ex.submit(j) for j in jobs]
            results = [f.result() for f in futures]
    else:
        results = [j() for j in jobs]
    (L_b, n_b), L_i, L_r, L_d = results
    return L_b, L_i, L_r, L_d, n_b


class _ValueTracer:
    """Stand-in for TracedParams when no gradient is needed."""

    def __init__(self, params):
        self.params = params

    def mu(self, name):
        return self.params.mu[name].physical(name)

    def jet(self, x, order=2, hess_dims=()):
        from .autodiff.jet import jet_forward
        out, _ = jet_forward(self.params.weights, self.params.biases, x, order=order,
                             hess_dims=hess_dims)
        return out


def _breakdown(L_b, L_i, L_r, L_d, n_b, colloc, weights):
    vals = [float(tape.value_of(v)) for v in (L_b, L_i, L_r, L_d)]
    total = weighted_total(weights, *vals)
    return LossBreakdown(*vals, total, n_b, colloc.N_i, colloc.N_r, colloc.N_d)


def assemble(params, colloc, problem, weights=LossWeights()):
    """Loss terms at ``params`` (no gradient)."""
    if colloc.N_r + colloc.N_b + colloc.N_i + colloc.N_d == 0:
        raise DomainError("collocation set is empty")
    L_b, L_i, L_r, L_d, n_b = _terms(_ValueTracer(params), colloc, problem)
    return _breakdown(L_b, L_i, L_r, L_d, n_b, colloc, weights)


def assemble_with_grad(params, colloc, problem, weights=LossWeights()):
    """``(LossBreakdown, gradient)``; the gradient follows ``params.flatten()``."""
    if colloc.N_r + colloc.N_b + colloc.N_i + colloc.N_d == 0:
        raise DomainError("collocation set is empty")
    box = {}

    def fn(tp):
        L_b, L_i, L_r, L_d, n_b = _terms(tp, colloc, problem)
        box["terms"] = (L_b, L_i, L_r, L_d, n_b)
        return weighted_total(weights, L_b, L_i, L_r, L_d)

    _, grad = value_and_param_gradient(params, fn)
    return _breakdown(*box["terms"], colloc, weights), grad

"""Heat-conduction residuals, boundary fluxes and laser kinematics (SI units).

All residual functions accept plain arrays or tape nodes so the same code is
used for evaluation and for gradient-based training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import tape
from .errors import DomainError, StructuralError

SIGMA_SB = 5.670374419e-8

__all__ = [
    "SIGMA_SB",
    "PropertyModel",
    "PhysicalParams",
    "Segment",
    "LaserSpec",
    "DomainSpec",
    "SURFACES",
    "surface_normal",
    "laser_center",
    "laser_centers",
    "q_laser",
    "q_conv",
    "q_rad",
    "rod_source",
    "pde_residual_3d",
    "pde_residual_thinwall",
    "pde_residual_rod",
    "boundary_residual",
    "bottom_flux_residual",
]


@dataclass(frozen=True)
class PropertyModel:
    """value(T) = slope * T + intercept; a constant has slope 0."""

    intercept: object
    slope: float = 0.0

    @classmethod
    def constant(cls, c):
        return cls(c, 0.0)

    @classmethod
    def affine(cls, slope, intercept):
        return cls(intercept, slope)

    @property
    def is_constant(self):
        return self.slope == 0.0

    def __call__(self, T):
        if self.slope == 0.0:
            return self.intercept
        return self.slope * T + self.intercept

    def at(self, T):
        """Float evaluation, ignoring any tape wrapping."""
        return float(self.slope * T + tape.value_of(self.intercept))


@dataclass(frozen=True)
class PhysicalParams:
    rho: float
    cp: PropertyModel
    k: PropertyModel
    h: object
    emissivity: object
    absorptivity: object
    T0: float = 298.0
    sigma_sb: float = SIGMA_SB

    def validate(self, T_max=None):
        T_max = self.T0 + 2702.0 if T_max is None else T_max
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if not float(tape.value_of(self.h)) >= 0:
            raise DomainError("h must be non-negative")
        for name in ("emissivity", "absorptivity"):
            v = float(tape.value_of(getattr(self, name)))
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")
        for name in ("cp", "k"):
            model = getattr(self, name)
            lo, hi = model.at(self.T0), model.at(T_max)
            if not (lo > 0 and hi > 0):
                raise DomainError(f"{name}(T) must be positive over [{self.T0}, {T_max}] K")
        if self.T0 <= 0:
            raise DomainError("T0 must be positive")
        return self

    def with_values(self, **values):
        """Copy with some coefficients replaced (e.g. by trainable tape nodes).

        ``cp`` and ``k`` given as scalars become constant property models.
        """
        kw = {}
        for name, v in values.items():
            if name in ("cp", "k") and not isinstance(v, PropertyModel):
                v = PropertyModel.constant(v)
            kw[name] = v
        return replace(self, **kw)


@dataclass(frozen=True)
class Segment:
    start: tuple
    end: tuple
    speed: float
    power_on: bool = True

    @property
    def duration(self):
        return float(np.linalg.norm(np.subtract(self.end, self.start))) / self.speed


@dataclass(frozen=True)
class LaserSpec:
    """Gaussian beam following a piecewise-linear toolpath.

    ``dwell`` seconds of inactivity separate consecutive segments.
    """

    power: float
    beam_radius: float
    segments: tuple = ()
    dwell: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.power < 0:
            raise DomainError("laser power must be >= 0")
        if self.beam_radius <= 0:
            raise DomainError("beam radius must be > 0")
        if self.dwell < 0:
            raise DomainError("dwell must be >= 0")
        for s in self.segments:
            if s.speed <= 0:
                raise DomainError("segment speeds must be > 0")
        dims = {len(s.start) for s in self.segments} | {len(s.end) for s in self.segments}
        if len(dims) > 1:
            raise StructuralError("toolpath segments mix dimensions")

    @classmethod
    def bidirectional(cls, power, beam_radius, start, end, speed, passes=1, dwell=0.0):
        segs = []
        a, b = tuple(start), tuple(end)
        for _ in range(passes):
            segs.append(Segment(a, b, speed))
            a, b = b, a
        return cls(power, beam_radius, tuple(segs), dwell)

    @property
    def duration(self):
        if not self.segments:
            return 0.0
        return sum(s.duration for s in self.segments) + self.dwell * (len(self.segments) - 1)

    def scaled(self, power=None, speed=None):
        segs = self.segments
        if speed is not None:
            segs = tuple(replace(s, speed=speed) for s in segs)
        return replace(self, power=self.power if power is None else power, segments=segs)


def laser_centers(t, laser):
    """Vectorized :func:`laser_center`: positions ``(N, dim)`` and activity flags."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if not laser.segments:
        return np.zeros((t.size, 1)), np.zeros(t.size, dtype=bool)
    dim = len(laser.segments[0].start)
    pos = np.empty((t.size, dim))
    active = np.zeros(t.size, dtype=bool)
    pos[:] = laser.segments[-1].end
    done = np.zeros(t.size, dtype=bool)
    t0 = 0.0
    for i, seg in enumerate(laser.segments):
        dur = seg.duration
        start = np.asarray(seg.start, dtype=np.float64)
        end = np.asarray(seg.end, dtype=np.float64)
        on = (~done) & (t <= t0 + dur)
        frac = np.clip((t[on] - t0) / dur, 0.0, 1.0) if dur > 0 else np.zeros(on.sum())
        pos[on] = start + frac[:, None] * (end - start)
        active[on] = seg.power_on
        done |= on
        t0 += dur
        if i < len(laser.segments) - 1 and laser.dwell > 0:
            dw = (~done) & (t < t0 + laser.dwell)
            pos[dw] = end
            active[dw] = False
            done |= dw
            t0 += laser.dwell
    return pos, active


def laser_center(t, laser, t_end=None):
    """Beam position and power-on flag at time ``t``."""
    if t < 0 or (t_end is not None and t > t_end * (1 + 1e-12)):
        raise DomainError(f"time {t} outside [0, {t_end}]")
    pos, active = laser_centers(np.array([t]), laser)
    return pos[0], bool(active[0])


@dataclass(frozen=True)
class DomainSpec:
    """Computational domain.

    ``box``: 3D plate [0,Lx]x[0,Ly]x[0,Lz], laser on z = Lz, base z = 0.
    ``wall``: 2D thin wall [0,L]x[0,H] of thickness ``thickness`` on a substrate.
    ``rod``: 1D rod [0,L] with fixed-temperature ends and cross-section ``area``.
    """

    mode: str
    lengths: tuple
    t_end: float
    thickness: float = 0.0
    k_sub: float = 0.0
    H_sub: float = 0.0
    base_bc: str = "dirichlet"
    area: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        dims = {"box": 3, "wall": 2, "rod": 1}
        if self.mode not in dims:
            raise StructuralError(f"unknown domain mode {self.mode!r}")
        if len(self.lengths) != dims[self.mode]:
            raise StructuralError(f"{self.mode} domain needs {dims[self.mode]} lengths")
        if any(v <= 0 for v in self.lengths) or self.t_end <= 0:
            raise DomainError("domain dimensions and t_end must be positive")
        if self.mode == "wall" and not (self.thickness > 0 and self.k_sub > 0 and self.H_sub > 0):
            raise DomainError("wall domain needs positive thickness, k_sub and H_sub")
        if self.base_bc not in ("dirichlet", "insulated"):
            raise StructuralError(f"unknown base_bc {self.base_bc!r}")
        if self.mode == "rod" and self.area <= 0:
            raise DomainError("rod cross-section area must be positive")

    @property
    def ndim(self):
        return len(self.lengths)

    @property
    def h_c(self):
        """Substrate coupling coefficient of the wall bottom edge."""
        return self.k_sub / self.H_sub

    def contains(self, pts, tol=1e-12):
        pts = np.atleast_2d(pts)
        ok = np.ones(pts.shape[0], dtype=bool)
        for i, length in enumerate(self.lengths):
            ok &= (pts[:, i] >= -tol * length) & (pts[:, i] <= length * (1 + tol))
        return ok


SURFACES = {
    "box": ("zmax", "zmin", "xmin", "xmax", "ymin", "ymax"),
    "wall": ("ymax", "ymin", "xmin", "xmax"),
    "rod": ("xmin", "xmax"),
}

_AXIS = {"x": 0, "y": 1, "z": 2}
_NDIM = {"box": 3, "wall": 2, "rod": 1}


def surface_normal(mode, surface_id):
    if surface_id not in SURFACES.get(mode, ()):
        raise StructuralError(f"unknown surface {surface_id!r} for {mode} domain")
    n = np.zeros(_NDIM[mode])
    n[_AXIS[surface_id[0]]] = 1.0 if surface_id.endswith("max") else -1.0
    return n


def q_laser(d, laser, eta):
    """Gaussian surface flux, negative meaning heat entering the part."""
    r2 = laser.beam_radius ** 2
    peak = 2.0 * laser.power / (math.pi * r2)
    return -(peak * np.exp(-2.0 * np.asarray(d) ** 2 / r2)) * eta


def q_conv(T, params):
    return params.h * (T - params.T0)


def q_rad(T, params):
    return (params.sigma_sb * params.emissivity) * (T ** 4 - params.T0 ** 4)


def rod_source(x, t, laser, domain, eta):
    """Line-integrated Gaussian beam as a volumetric source in a rod (W/m^3)."""
    centers, active = laser_centers(t, laser)
    d = np.asarray(x).reshape(-1) - centers[:, 0]
    r = laser.beam_radius
    shape = math.sqrt(2.0 / math.pi) / r * np.exp(-2.0 * d * d / (r * r)) * active
    return (laser.power / domain.area) * shape * eta


def pde_residual_3d(derivs, params, source=0.0):
    T = derivs.T
    return params.rho * params.cp(T) * derivs.dT_dt - params.k(T) * derivs.laplacian - source


def pde_residual_rod(derivs, params, source=0.0):
    return pde_residual_3d(derivs, params, source)


def pde_residual_thinwall(derivs, params, domain):
    T = derivs.T
    w = domain.thickness
    sink = (2.0 * params.h / w) * (T - params.T0) + \
        (2.0 * params.sigma_sb * params.emissivity / w) * (T ** 4 - params.T0 ** 4)
    return params.rho * params.cp(T) * derivs.dT_dt - params.k(T) * derivs.laplacian + sink


def _laser_distance(pts, t, laser, mode):
    centers, active = laser_centers(t, laser)
    pts = np.atleast_2d(pts)
    if mode == "box":
        d = np.hypot(pts[:, 0] - centers[:, 0], pts[:, 1] - centers[:, 1])
    else:
        d = np.abs(pts[:, 0] - centers[:, 0])
    return d, active


def boundary_residual(pts, t, derivs, params, laser, surface_id, domain, laser_on_top=True):
    """Residual on one boundary surface for a batch of points.

    Flux surfaces: (-k grad T).n - (q_laser [top only] + q_conv + q_rad), W/m^2.
    Box base (Dirichlet) and rod ends: T - T0 in kelvin. Wall bottom: the
    substrate Robin condition of :func:`bottom_flux_residual`.
    """
    mode = domain.mode
    n = surface_normal(mode, surface_id)
    T = derivs.T
    if mode == "rod" or (mode == "box" and surface_id == "zmin" and domain.base_bc == "dirichlet"):
        return T - params.T0
    if mode == "wall" and surface_id == "ymin":
        return bottom_flux_residual(derivs, params, domain)
    axis = int(np.flatnonzero(n)[0])
    flux_n = -params.k(T) * derivs.grad[axis] * n[axis]
    if mode == "box" and surface_id == "zmin":
        # insulated base
        return flux_n
    q = q_conv(T, params) + q_rad(T, params)
    top = (mode == "box" and surface_id == "zmax") or (mode == "wall" and surface_id == "ymax")
    if top and laser_on_top and laser is not None:
        d, active = _laser_distance(pts, t, laser, mode)
        q = q + q_laser(d, laser, params.absorptivity) * active
    return flux_n - q


def bottom_flux_residual(derivs, params, domain):
    """k dT/dy - h_c (T - T0) on the wall's bottom edge."""
    T = derivs.T
    return params.k(T) * derivs.grad[1] - domain.h_c * (T - params.T0)

"""Collocation sets: grid-based interior, boundary, initial and data points."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import physics
from .data import LabelledData
from .errors import DomainError

log = logging.getLogger(__name__)

__all__ = [
    "SamplingConfig",
    "CollocationSet",
    "time_slices",
    "sample_boundary",
    "sample_interior",
    "sample_initial",
    "subsample_data",
    "build_collocation",
]

_TOL = 1e-9


@dataclass(frozen=True)
class SamplingConfig:
    dt: float = 0.05
    coarse_spacing: float = 1e-3
    fine_spacing: float = 0.25e-3
    fine_window: float = 6e-3
    fine_boundary: bool = True
    # the t=0 slice asks for the laser flux on a field that is still uniform
    boundary_at_t0: bool = True
    top_spacing: float = 0.5e-3
    top_depth: float = 1e-3
    lower_factor: float = 4.0
    interior_mode: str = "grid"
    random_per_slice: int = 0
    seed: int = 0


@dataclass
class CollocationSet:
    """Tagged sample points, each category kept in canonical sorted order."""

    interior_pts: np.ndarray
    interior_t: np.ndarray
    boundary_pts: np.ndarray
    boundary_t: np.ndarray
    boundary_normal: np.ndarray
    boundary_surface: np.ndarray
    initial_pts: np.ndarray
    initial_T: np.ndarray
    data: LabelledData
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self._canonicalize()

    @property
    def ndim(self):
        return self.interior_pts.shape[1]

    @property
    def N_r(self):
        return self.interior_t.size

    @property
    def N_b(self):
        return self.boundary_t.size

    @property
    def N_i(self):
        return self.initial_T.size

    @property
    def N_d(self):
        return len(self.data)

    def _canonicalize(self):
        # fixed summation order regardless of how the points were supplied
        idx = _lexorder(self.interior_pts, self.interior_t)
        self.interior_pts = self.interior_pts[idx]
        self.interior_t = self.interior_t[idx]
        idx = _lexorder(self.boundary_pts, self.boundary_t, self.boundary_surface)
        self.boundary_pts = self.boundary_pts[idx]
        self.boundary_t = self.boundary_t[idx]
        self.boundary_normal = self.boundary_normal[idx]
        self.boundary_surface = self.boundary_surface[idx]
        idx = _lexorder(self.initial_pts, np.zeros(self.initial_T.size), self.initial_T)
        self.initial_pts = self.initial_pts[idx]
        self.initial_T = self.initial_T[idx]
        if len(self.data):
            idx = _lexorder(self.data.pts, self.data.t, self.data.T)
            self.data = self.data.subset(idx)

    def with_data(self, data):
        return CollocationSet(self.interior_pts, self.interior_t, self.boundary_pts, self.boundary_t,
                              self.boundary_normal, self.boundary_surface, self.initial_pts,
                              self.initial_T, data, list(self.warnings))

    def boundary_groups(self):
        """``{surface_id: index array}`` in first-appearance order."""
        out = {}
        for sid in dict.fromkeys(self.boundary_surface.tolist()):
            out[sid] = np.flatnonzero(self.boundary_surface == sid)
        return out


def _lexorder(pts, t, extra=None):
    keys = [pts[:, i] for i in range(pts.shape[1] - 1, -1, -1)] + [t]
    if extra is not None:
        keys = [extra] + keys
    if not len(t):
        return np.arange(0)
    return np.lexsort(keys)


def _closed_grid(length, h, start=0.0):
    n = int(np.floor(length / h + _TOL)) + 1
    return start + h * np.arange(n)


def time_slices(t_end, dt):
    n = int(np.floor(t_end / dt + _TOL))
    return dt * np.arange(n + 1)


def _face_grid(domain, sid, spacing):
    """Closed grid on one face of a box or one edge of a wall."""
    axis = "xyz".index(sid[0])
    fixed = domain.lengths[axis] if sid.endswith("max") else 0.0
    axes = []
    for i, length in enumerate(domain.lengths):
        axes.append(np.array([fixed]) if i == axis else _closed_grid(length, spacing))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _keys(pts):
    return set(map(tuple, np.round(pts / _TOL).astype(np.int64)))


def _top_surface(domain):
    return {"box": "zmax", "wall": "ymax"}.get(domain.mode)


def _fine_window(domain, center, cfg):
    """Fine grid on the top surface centred on the beam, clipped to the surface."""
    half = 0.5 * cfg.fine_window
    offs = _closed_grid(cfg.fine_window, cfg.fine_spacing) - half
    n_inplane = domain.ndim - 1
    axes = [center[i] + offs for i in range(n_inplane)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.zeros((mesh[0].size, domain.ndim))
    for i in range(n_inplane):
        pts[:, i] = mesh[i].ravel()
    pts[:, -1] = domain.lengths[-1]
    inside = np.ones(pts.shape[0], dtype=bool)
    for i in range(n_inplane):
        inside &= (pts[:, i] >= -_TOL) & (pts[:, i] <= domain.lengths[i] + _TOL)
    return pts[inside]


def sample_boundary(domain, laser, cfg, surfaces=None):
    """Boundary points per time slice with laser-tracking refinement on the top surface.

    Returns ``(pts, t, normals, surface_ids, warnings)``. Points on shared
    edges are kept once, by the first surface in :data:`physics.SURFACES`.
    """
    warnings = []
    times = time_slices(domain.t_end, cfg.dt)
    if not cfg.boundary_at_t0 and len(times) > 1:
        times = times[1:]
    order = [s for s in physics.SURFACES[domain.mode] if surfaces is None or s in surfaces]
    coarse, sids = [], []
    seen = set()
    for sid in physics.SURFACES[domain.mode]:
        if domain.mode == "rod":
            g = np.array([[0.0 if sid == "xmin" else domain.lengths[0]]])
        else:
            g = _face_grid(domain, sid, cfg.coarse_spacing)
        keys = list(map(tuple, np.round(g / _TOL).astype(np.int64)))
        keep = np.array([k not in seen for k in keys], dtype=bool)
        seen.update(keys)
        if sid in order:
            coarse.append(g[keep])
            sids.extend([sid] * int(keep.sum()))
    coarse = np.concatenate(coarse) if coarse else np.zeros((0, domain.ndim))
    sids = np.array(sids, dtype="U4")
    top = _top_surface(domain)
    fine_on = cfg.fine_boundary and top is not None and top in order and laser is not None \
        and bool(laser.segments)
    if fine_on:
        for i in range(domain.ndim - 1):
            if cfg.fine_window > domain.lengths[i]:
                msg = f"fine window {cfg.fine_window} m exceeds domain extent {domain.lengths[i]} m; clipped"
                warnings.append(msg)
                log.warning(msg)
        centers, _ = physics.laser_centers(times, laser)
    coarse_keys = _keys(coarse) if fine_on else set()
    pts, ts, ids = [], [], []
    for k, t in enumerate(times):
        pts.append(coarse)
        ts.append(np.full(coarse.shape[0], t))
        ids.append(sids)
        if fine_on:
            f = _fine_window(domain, centers[k], cfg)
            fk = list(map(tuple, np.round(f / _TOL).astype(np.int64)))
            keep = np.array([key not in coarse_keys for key in fk], dtype=bool)
            f = f[keep]
            pts.append(f)
            ts.append(np.full(f.shape[0], t))
            ids.append(np.array([top] * f.shape[0], dtype="U4"))
    pts = np.concatenate(pts)
    ids = np.concatenate(ids)
    normals = np.stack([physics.surface_normal(domain.mode, s) for s in ids]) if ids.size \
        else np.zeros((0, domain.ndim))
    return pts, np.concatenate(ts), normals, ids, warnings


def _interior_grid(domain, cfg):
    if domain.mode == "rod":
        return _closed_grid(domain.lengths[0], cfg.top_spacing)[:, None]
    top_h = cfg.top_spacing
    low_h = cfg.top_spacing * cfg.lower_factor
    H = domain.lengths[-1]
    split = H - cfg.top_depth
    inplane = domain.lengths[:-1]
    top_axes = [_closed_grid(L, top_h) for L in inplane]
    top_axes.append(_closed_grid(cfg.top_depth, top_h, start=split))
    low_axes = [_closed_grid(L, low_h) for L in inplane]
    zl = _closed_grid(H, low_h)
    low_axes.append(zl[zl < split - _TOL])
    out = []
    for axes in (top_axes, low_axes):
        mesh = np.meshgrid(*axes, indexing="ij")
        out.append(np.stack([m.ravel() for m in mesh], axis=1))
    return np.concatenate(out)


def sample_interior(domain, cfg):
    """Residual points: fine grid in the top band, ``lower_factor`` coarser below."""
    times = time_slices(domain.t_end, cfg.dt)
    if cfg.interior_mode == "random":
        rng = np.random.default_rng(cfg.seed)
        n = cfg.random_per_slice
        pts = rng.uniform(0.0, 1.0, size=(n * times.size, domain.ndim)) * np.array(domain.lengths)
        return pts, np.repeat(times, n)
    if cfg.interior_mode != "grid":
        raise DomainError(f"unknown interior mode {cfg.interior_mode!r}")
    grid = _interior_grid(domain, cfg)
    pts = np.tile(grid, (times.size, 1))
    return pts, np.repeat(times, grid.shape[0])


def sample_initial(domain, cfg, T0):
    """Initial-condition points: the interior slice grid at t = 0 with target T0."""
    grid = _interior_grid(domain, cfg)
    if grid.shape[0] == 0:
        raise DomainError("empty initial grid")
    return grid, np.full(grid.shape[0], float(T0))


def subsample_data(dataset, n, seed):
    """``n`` records drawn uniformly without replacement, reproducible by seed."""
    if n > len(dataset) or n < 0:
        raise DomainError(f"cannot draw {n} records from {len(dataset)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return dataset.subset(idx)


def build_collocation(domain, laser, cfg, T0, data=None, surfaces=None, with_initial=True):
    ipts, it = sample_interior(domain, cfg)
    bpts, bt, bn, bs, warns = sample_boundary(domain, laser, cfg, surfaces=surfaces)
    if with_initial:
        p0, T_init = sample_initial(domain, cfg, T0)
    else:
        p0, T_init = np.zeros((0, domain.ndim)), np.zeros(0)
    if data is None:
        data = LabelledData.empty(domain.ndim)
    return CollocationSet(ipts, it, bpts, bt, bn, bs, p0, T_init, data, warns)

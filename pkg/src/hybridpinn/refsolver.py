"""Finite-difference reference solver for the moving-laser conduction problem.

Node-centred grid with finite-volume weights (half cells on the boundary), so
conduction is exactly conservative. Crank-Nicolson or explicit Euler in time;
radiation is linearized about the previous step; temperature-dependent
properties are lagged by one step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from . import physics
from .data import LabelledData
from .errors import DomainError, NumericalError, StructuralError

log = logging.getLogger(__name__)

__all__ = [
    "GridSpec",
    "FieldSnapshot",
    "solve",
    "export_dataset",
    "write_snapshot_csv",
    "read_snapshot_csv",
    "stability_limit",
    "node_volumes",
]


@dataclass(frozen=True)
class GridSpec:
    spacing: tuple
    dt: float = 5e-3
    integrator: str = "cn"
    output_interval: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        if any(h <= 0 for h in self.spacing) or self.dt <= 0:
            raise DomainError("grid spacing and dt must be positive")
        if self.integrator not in ("cn", "explicit"):
            raise StructuralError(f"unknown integrator {self.integrator!r}")


@dataclass
class FieldSnapshot:
    time: float
    origin: tuple
    spacing: tuple
    values: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def dims(self):
        return self.values.shape

    def axes(self):
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.values.shape)]

    def points(self):
        """Node coordinates in row-major order, ``(N, ndim)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class _Grid:
    def __init__(self, domain, grid):
        if len(grid.spacing) != domain.ndim:
            raise StructuralError("grid spacing does not match domain dimension")
        self.n = []
        self.h = []
        for length, h in zip(domain.lengths, grid.spacing):
            n = int(round(length / h)) + 1
            if n < 2:
                raise DomainError("grid spacing larger than the domain")
            self.n.append(n)
            self.h.append(length / (n - 1))
        self.shape = tuple(self.n)
        self.size = int(np.prod(self.shape))
        self.axes = [np.arange(n) * h for n, h in zip(self.n, self.h)]
        widths = []
        for n, h in zip(self.n, self.h):
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            widths.append(w)
        self.widths = widths
        mesh = np.meshgrid(*widths, indexing="ij")
        self.volume = np.prod(np.stack(mesh), axis=0).ravel()
        self.index = np.arange(self.size).reshape(self.shape)
        cmesh = np.meshgrid(*self.axes, indexing="ij")
        self.coords = np.stack([m.ravel() for m in cmesh], axis=1)

    def face_area(self, axis):
        """Per-node transverse area for a face normal to ``axis`` (full node grid)."""
        others = [self.widths[j] if j != axis else np.ones(self.n[j]) for j in range(len(self.n))]
        mesh = np.meshgrid(*others, indexing="ij")
        return np.prod(np.stack(mesh), axis=0)

    def surface_nodes(self, surface_id):
        axis = "xyz".index(surface_id[0])
        sl = [slice(None)] * len(self.n)
        sl[axis] = -1 if surface_id.endswith("max") else 0
        sl = tuple(sl)
        return self.index[sl].ravel(), self.face_area(axis)[sl].ravel()

    def edges(self, axis):
        sl_a = [slice(None)] * len(self.n)
        sl_b = [slice(None)] * len(self.n)
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        p = self.index[tuple(sl_a)].ravel()
        q = self.index[tuple(sl_b)].ravel()
        area = self.face_area(axis)[tuple(sl_a)].ravel()
        return p, q, area / self.h[axis]


class _Assembler:
    def __init__(self, domain, phys, laser, grid):
        self.domain = domain
        self.phys = phys
        self.laser = laser
        self.g = _Grid(domain, grid)
        g = self.g
        self.edge_list = [g.edges(ax) for ax in range(len(g.n))]
        n = g.size
        self.a = np.zeros(n)  # linear loss coefficient, W/K
        self.b = np.zeros(n)  # radiative coefficient, W/K^4
        self.pinned = np.zeros(n, dtype=bool)
        self.laser_nodes = None
        self.laser_area = None
        mode = domain.mode
        h = phys.h
        sig_eps = phys.sigma_sb * phys.emissivity
        if mode == "rod":
            self.pinned[[0, n - 1]] = True
        else:
            for sid in physics.SURFACES[mode]:
                nodes, area = g.surface_nodes(sid)
                if mode == "box" and sid == "zmin":
                    if domain.base_bc == "dirichlet":
                        self.pinned[nodes] = True
                    continue
                if mode == "wall" and sid == "ymin":
                    np.add.at(self.a, nodes, domain.h_c * area)
                    continue
                np.add.at(self.a, nodes, h * area)
                np.add.at(self.b, nodes, sig_eps * area)
                if sid in ("zmax",) or (mode == "wall" and sid == "ymax"):
                    self.laser_nodes = nodes
                    self.laser_area = area
            if mode == "wall":
                w = domain.thickness
                self.a += (2.0 * h / w) * g.volume
                self.b += (2.0 * sig_eps / w) * g.volume
        self.const_k = phys.k.is_constant
        self.const_cp = phys.cp.is_constant
        self._K = None

    def conductance(self, T):
        g = self.g
        if self._K is not None and self.const_k:
            return self._K
        rows, cols, vals = [], [], []
        for p, q, geo in self.edge_list:
            if self.const_k:
                kf = self.phys.k.at(0.0) * np.ones(p.size)
            else:
                kf = self.phys.k(0.5 * (T[p] + T[q]))
            G = kf * geo
            rows += [p, q, p, q]
            cols += [p, q, q, p]
            vals += [G, G, -G, -G]
        K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(g.size, g.size))
        K.sum_duplicates()
        self._K = K
        return K

    def capacity(self, T):
        cp = self.phys.cp.at(0.0) if self.const_cp else self.phys.cp(T)
        return self.phys.rho * cp * self.g.volume

    def laser_power(self, t):
        """Absorbed laser power per node (W, positive into the part)."""
        n = self.g.size
        out = np.zeros(n)
        laser = self.laser
        if laser is None or laser.power == 0 or not laser.segments:
            return out
        centers, active = physics.laser_centers(np.array([t]), laser)
        if not active[0]:
            return out
        c = centers[0]
        eta = float(self.phys.absorptivity)
        if self.domain.mode == "rod":
            x = self.g.coords[:, 0]
            src = physics.rod_source(x, np.full(x.size, t), laser, self.domain, eta)
            return src * self.g.volume
        pts = self.g.coords[self.laser_nodes]
        if self.domain.mode == "box":
            d = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
        else:
            d = np.abs(pts[:, 0] - c[0])
        q = physics.q_laser(d, laser, eta)
        np.add.at(out, self.laser_nodes, -q * self.laser_area)
        return out

    def losses(self, T):
        T0 = self.phys.T0
        return -self.a * (T - T0) - self.b * (T ** 4 - T0 ** 4)


def stability_limit(domain, phys, grid, T_ref=None):
    """Largest stable explicit-Euler step (Gershgorin bound)."""
    asm = _Assembler(domain, phys, None, grid)
    T_ref = phys.T0 if T_ref is None else T_ref
    T = np.full(asm.g.size, T_ref)
    K = asm.conductance(T)
    C = asm.capacity(T)
    diag = K.diagonal() + asm.a + 4.0 * asm.b * T_ref ** 3
    free = ~asm.pinned & (diag > 0)
    if not free.any():
        return np.inf
    return float(np.min(C[free] / diag[free]))


def solve(domain, phys, laser, grid, output_interval=None, initial=None, t_end=None):
    """March the field from ``initial`` (default uniform T0) and return snapshots.

    ``initial`` may be an array over the node grid or a callable of the node
    coordinates ``(N, ndim)``. Snapshots are emitted every ``output_interval``
    seconds (default ``grid.output_interval``), including t = 0.
    """
    t_end = domain.t_end if t_end is None else t_end
    interval = grid.output_interval if output_interval is None else output_interval
    asm = _Assembler(domain, phys, laser, grid)
    g = asm.g
    T0 = phys.T0
    if initial is None:
        T = np.full(g.size, T0)
    elif callable(initial):
        T = np.asarray(initial(g.coords), dtype=np.float64).reshape(-1).copy()
    else:
        T = np.asarray(initial, dtype=np.float64).reshape(-1).copy()
    if T.size != g.size:
        raise StructuralError("initial field has the wrong size")
    T[asm.pinned] = T0

    n_steps = int(round(t_end / grid.dt))
    if abs(n_steps * grid.dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise DomainError(f"t_end {t_end} is not a multiple of dt {grid.dt}")
    stride = max(1, int(round(interval / grid.dt)))
    if grid.integrator == "explicit":
        limit = stability_limit(domain, phys, grid, T_ref=float(np.max(T)))
        if grid.dt > limit:
            raise DomainError(f"explicit step {grid.dt} s exceeds the stability limit {limit:.6g} s")

    snaps = [_snapshot(0.0, g, T, T0)]
    lu = None
    L_old = asm.laser_power(0.0)
    for step in range(1, n_steps + 1):
        t_new = step * grid.dt
        K = asm.conductance(T)
        C = asm.capacity(T)
        L_new = asm.laser_power(t_new)
        F = asm.losses(T)
        if grid.integrator == "explicit":
            T = T + grid.dt / C * (-(K @ T) + L_old + F)
            T[asm.pinned] = T0
        else:
            lin = asm.a + 4.0 * asm.b * T ** 3
            diag = C / grid.dt + 0.5 * lin
            # F(T1) ~ F(T0) - lin (T1 - T0), averaged with F(T0)
            rhs = (C / grid.dt + 0.5 * lin) * T - 0.5 * (K @ T) + 0.5 * (L_old + L_new) + F
            rhs[asm.pinned] = T0
            if len(g.n) == 3 or g.size > _DIRECT_MAX:
                T = _cg_step(0.5 * K + sp.diags(diag), rhs, T, asm.pinned, T0)
            else:
                reuse = asm.const_k and asm.const_cp and not asm.b.any() and lu is not None
                if not reuse:
                    M = (0.5 * K + sp.diags(diag)).tolil()
                    for p in np.flatnonzero(asm.pinned):
                        M.rows[p] = [p]
                        M.data[p] = [1.0]
                    lu = splu(M.tocsc())
                T = lu.solve(rhs)
                T[asm.pinned] = T0
        L_old = L_new
        if not np.all(np.isfinite(T)):
            bad = int(np.flatnonzero(~np.isfinite(T))[0])
            raise NumericalError(f"non-finite temperature at step {step}",
                                 point=(*g.coords[bad], t_new))
        if step % stride == 0 or step == n_steps:
            snaps.append(_snapshot(t_new, g, T, T0))
    return snaps


_DIRECT_MAX = 40000


def _cg_step(A, rhs, T_prev, pinned, T0):
    """3D and large grids: Jacobi-preconditioned CG on the free nodes (the matrix is SPD)."""
    free = ~pinned
    A = A.tocsr()
    Aff = A[free][:, free]
    b = rhs[free] - A[free][:, pinned] @ np.full(int(pinned.sum()), T0)
    dinv = 1.0 / Aff.diagonal()
    pre = sp.diags(dinv)
    x, info = cg(Aff, b, x0=T_prev[free], rtol=1e-13, atol=0.0, maxiter=10 * Aff.shape[0], M=pre)
    if info != 0:
        raise NumericalError(f"conjugate-gradient solve did not converge (info={info})")
    out = np.full(T_prev.size, float(T0))
    out[free] = x
    return out


def _snapshot(t, g, T, T0):
    snap = FieldSnapshot(float(t), tuple(0.0 for _ in g.n), tuple(g.h), T.reshape(g.shape).copy())
    tmin = float(T.min())
    if tmin < T0 - 1.0:
        msg = f"t={t:.4g}s: minimum {tmin:.6g} K below T0 - 1 K"
        snap.warnings.append(msg)
        log.warning(msg)
    return snap


def export_dataset(snapshots, mode="full", n=None, seed=0):
    """Flatten snapshots to labelled records; ``random`` draws ``n`` without replacement."""
    pts = []
    ts = []
    Ts = []
    for s in snapshots:
        p = s.points()
        pts.append(p)
        ts.append(np.full(p.shape[0], s.time))
        Ts.append(s.values.ravel())
    full = LabelledData(np.concatenate(pts), np.concatenate(ts), np.concatenate(Ts))
    if mode == "full":
        return full
    if mode != "random":
        raise StructuralError(f"unknown export mode {mode!r}")
    if n is None or n > len(full) or n < 0:
        raise DomainError(f"cannot draw {n} records from {len(full)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(full), size=n, replace=False))
    return full.subset(idx)


def write_snapshot_csv(snap, path):
    """Header rows ``time``, ``origin``, ``spacing``, ``dims`` then the values.

    Values are row-major, one innermost-axis row per line.
    """
    vals = snap.values
    with open(path, "w") as fh:
        fh.write(f"time,{snap.time:.17g}\n")
        fh.write("origin," + ",".join(f"{v:.17g}" for v in snap.origin) + "\n")
        fh.write("spacing," + ",".join(f"{v:.17g}" for v in snap.spacing) + "\n")
        fh.write("dims," + ",".join(str(n) for n in vals.shape) + "\n")
        rows = vals.reshape(-1, vals.shape[-1])
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_snapshot_csv(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 4:
        raise StructuralError(f"{path}: truncated snapshot header")
    head = {}
    for line in lines[:4]:
        key, *rest = line.split(",")
        head[key] = rest
    try:
        time = float(head["time"][0])
        origin = tuple(float(v) for v in head["origin"])
        spacing = tuple(float(v) for v in head["spacing"])
        dims = tuple(int(v) for v in head["dims"])
    except (KeyError, ValueError, IndexError):
        raise StructuralError(f"{path}: malformed snapshot header") from None
    rows = [[float(v) for v in line.split(",")] for line in lines[4:] if line.strip()]
    vals = np.array(rows, dtype=np.float64)
    if vals.size != int(np.prod(dims)):
        raise StructuralError(f"{path}: expected {int(np.prod(dims))} values, found {vals.size}")
    return FieldSnapshot(time, origin, spacing, vals.reshape(dims))


def node_volumes(domain, grid):
    """Control volume of every node (m^3, m^2 per unit thickness, or m for a rod)."""
    return _Grid(domain, grid).volume.copy()

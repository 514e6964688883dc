"""IR frame stacks: synthetic generation, IRSTACK files, ingestion and conversion to data.

Frame geometry: pixel ``(i, j)`` (row, column) has its centre at
``origin + (j * pitch, i * pitch)``, so columns run along x and rows along
the second in-plane axis. Invalid (saturated or off-part) pixels hold NaN.

IRSTACK v1 text layout::

    IRSTACK v1, rows, cols, pitch_m, t0_s, dt_s
    # t=0.1, origin=0.002,0.007      (optional, applies to the next frame)
    v,v,...,v                        (rows lines of cols values, NaN = invalid)
    ...

Frame ``k`` is at ``t0 + k * dt`` and has origin ``(0, 0)`` unless a comment
line before it says otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, physics
from .data import LabelledData
from .errors import DomainError, StructuralError

__all__ = [
    "IRWindowSpec",
    "IRFrame",
    "IRFrameStack",
    "Placement",
    "gen_synthetic_ir",
    "write_irstack",
    "read_irstack",
    "ingest_ir",
    "frames_to_data",
]

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class IRWindowSpec:
    window: float = 6e-3
    pitch: float = 0.25e-3
    frame_rate: float = 10.0
    threshold: float = 2000.0
    sigma: float = 100.0
    seed: int = 0
    T0: float = 298.0

    def __post_init__(self):
        if not (self.window > 0 and self.pitch > 0 and self.frame_rate > 0):
            raise DomainError("window, pitch and frame rate must be positive")
        ratio = self.window / self.pitch
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise DomainError(f"pitch {self.pitch} does not divide window {self.window}")
        if not self.threshold > self.T0:
            raise DomainError("saturation threshold must exceed T0")
        if self.sigma < 0:
            raise DomainError("noise sigma must be >= 0")

    @property
    def n_pixels(self):
        return int(round(self.window / self.pitch))


@dataclass
class IRFrame:
    time: float
    origin: tuple
    pitch: float
    values: np.ndarray  # (rows, cols), NaN where invalid

    @property
    def mask(self):
        return ~np.isnan(self.values)

    def pixel_centres(self):
        rows, cols = self.values.shape
        x = self.origin[0] + self.pitch * np.arange(cols)
        y = self.origin[1] + self.pitch * np.arange(rows)
        return np.meshgrid(x, y, indexing="xy")


@dataclass
class IRFrameStack:
    frames: list = field(default_factory=list)

    def __post_init__(self):
        times = [f.time for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise StructuralError("frame times must be strictly increasing")
        shapes = {f.values.shape for f in self.frames}
        if len(shapes) > 1:
            raise StructuralError(f"inconsistent frame dimensions {sorted(shapes)}")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames[0].values.shape if self.frames else (0, 0)

    def n_valid(self):
        return int(sum(f.mask.sum() for f in self.frames))


def _surface_field(snap, domain):
    if domain.mode == "box":
        vals = snap.values[:, :, -1]
    elif domain.mode == "wall":
        vals = snap.values
    else:
        raise StructuralError("IR frames need a box or wall domain")
    return vals, snap.origin[:2], snap.spacing[:2]


def _window_centre(t, laser, domain):
    c, _ = physics.laser_centers(np.array([t]), laser)
    if domain.mode == "box":
        return float(c[0, 0]), float(c[0, 1])
    # side view of a wall: the beam sits on the top edge
    return float(c[0, 0]), domain.lengths[1]


def gen_synthetic_ir(snapshots, laser, spec, domain):
    """Camera-like frames from an oracle field.

    One frame per ``1/frame_rate`` seconds, a window of ``spec.window`` centred
    on the beam; pixels outside the part or hotter than ``spec.threshold``
    are dropped, the rest get Gaussian noise.
    """
    if not snapshots:
        raise DomainError("no snapshots")
    by_time = {round(s.time / _TIME_TOL): s for s in snapshots}
    t_last = snapshots[-1].time
    period = 1.0 / spec.frame_rate
    n_frames = int(math.floor(t_last / period + 1e-9)) + 1
    rng = np.random.default_rng(spec.seed)
    n = spec.n_pixels
    offs = (np.arange(n) + 0.5) * spec.pitch - 0.5 * spec.window
    frames = []
    for k in range(n_frames):
        t = k * period
        snap = by_time.get(round(t / _TIME_TOL))
        if snap is None:
            raise DomainError(f"no snapshot at frame time {t:.6g} s; snapshot cadence is below the frame rate")
        vals, origin, spacing = _surface_field(snap, domain)
        cx, cy = _window_centre(t, laser, domain)
        px, py = np.meshgrid(cx + offs, cy + offs, indexing="xy")
        img = _kernels.bilinear(vals, origin, spacing, px.ravel(), py.ravel()).reshape(n, n)
        img[img > spec.threshold] = np.nan
        noise = rng.standard_normal(img.shape) * spec.sigma
        img = img + noise if spec.sigma > 0 else img
        frames.append(IRFrame(t, (cx + offs[0], cy + offs[0]), spec.pitch, img))
    return IRFrameStack(frames)


def write_irstack(stack, path):
    if not len(stack):
        raise DomainError("empty frame stack")
    rows, cols = stack.shape
    f0 = stack.frames[0]
    dt = stack.frames[1].time - f0.time if len(stack) > 1 else 0.0
    lines = [f"IRSTACK v1, {rows}, {cols}, {f0.pitch!r}, {f0.time!r}, {dt!r}"]
    for f in stack.frames:
        lines.append(f"# t={f.time!r}, origin={f.origin[0]!r},{f.origin[1]!r}")
        for row in f.values:
            lines.append(",".join("NaN" if np.isnan(v) else repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_comment(text, path, lineno):
    out = {}
    body = text.lstrip("#").strip()
    for part in body.split(", "):
        if "=" not in part:
            continue
        key, val = part.split("=", 1)
        key = key.strip()
        try:
            if key == "t":
                out["t"] = float(val)
            elif key == "origin":
                xs = [float(v) for v in val.split(",")]
                if len(xs) != 2:
                    raise ValueError
                out["origin"] = tuple(xs)
        except ValueError:
            raise StructuralError(f"{path}:{lineno}: malformed frame comment") from None
    return out


def read_irstack(path):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise StructuralError(f"{path}: empty file")
    head = [p.strip() for p in lines[0].split(",")]
    if len(head) != 6 or head[0] != "IRSTACK v1":
        raise StructuralError(f"{path}:1: expected 'IRSTACK v1, rows, cols, pitch_m, t0_s, dt_s'")
    try:
        rows, cols = int(head[1]), int(head[2])
        pitch, t0, dt = float(head[3]), float(head[4]), float(head[5])
    except ValueError:
        raise StructuralError(f"{path}:1: malformed header values") from None
    if rows < 1 or cols < 1 or not pitch > 0:
        raise StructuralError(f"{path}:1: bad frame dimensions or pitch")
    frames = []
    meta = {}
    buf = []
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if buf:
                raise StructuralError(f"{path}:{lineno}: comment inside a frame")
            meta = _parse_comment(s, path, lineno)
            continue
        parts = s.split(",")
        if len(parts) != cols:
            raise StructuralError(f"{path}:{lineno}: expected {cols} values, got {len(parts)}")
        try:
            buf.append([float(p) for p in parts])
        except ValueError:
            raise StructuralError(f"{path}:{lineno}: non-numeric pixel value") from None
        if len(buf) == rows:
            k = len(frames)
            t = meta.get("t", t0 + k * dt)
            frames.append(IRFrame(t, meta.get("origin", (0.0, 0.0)), pitch, np.array(buf)))
            buf, meta = [], {}
    if buf:
        raise StructuralError(f"{path}: trailing partial frame ({len(buf)} of {rows} rows)")
    return IRFrameStack(frames)


def ingest_ir(path_or_stack, crop=None, factor=1):
    """Crop then block-average a stack.

    ``crop = (row0, col0, n_rows, n_cols)`` in pixels; a remainder that does
    not fill a whole block is discarded. Invalid pixels are left out of each
    block mean and a block with no valid pixel stays invalid.
    """
    stack = path_or_stack if isinstance(path_or_stack, IRFrameStack) else read_irstack(path_or_stack)
    factor = int(factor)
    if factor < 1:
        raise DomainError("downsample factor must be >= 1")
    rows, cols = stack.shape
    r0, c0, nr, nc = crop if crop is not None else (0, 0, rows, cols)
    if r0 < 0 or c0 < 0 or nr < 1 or nc < 1 or r0 + nr > rows or c0 + nc > cols:
        raise DomainError(f"crop {crop} outside {rows}x{cols} frames")
    if nr < factor or nc < factor:
        raise DomainError("crop smaller than one block")
    out = []
    for f in stack.frames:
        sub = f.values[r0:r0 + nr, c0:c0 + nc]
        vals = sub.copy() if factor == 1 else _kernels.block_mean(sub, factor)
        shift = 0.5 * (factor - 1)
        origin = (f.origin[0] + (c0 + shift) * f.pitch, f.origin[1] + (r0 + shift) * f.pitch)
        out.append(IRFrame(f.time, origin, f.pitch * factor, vals))
    return IRFrameStack(out)


@dataclass(frozen=True)
class Placement:
    """Frame coordinates to part coordinates.

    ``x = offset[0] + fx``, ``y = offset[1] + sign * fy`` with ``sign = -1``
    when ``flip_rows``; a 3D part gets ``fixed`` as its z coordinate.
    """

    ndim: int = 2
    offset: tuple = (0.0, 0.0)
    flip_rows: bool = False
    fixed: float = 0.0

    def map(self, fx, fy):
        y = self.offset[1] + (-fy if self.flip_rows else fy)
        cols = [self.offset[0] + fx, y]
        if self.ndim == 3:
            cols.append(np.full_like(fx, self.fixed))
        elif self.ndim != 2:
            raise StructuralError("placement needs a 2D or 3D part")
        return np.stack(cols, axis=1)


def _region_mask(region, pts, t):
    if region is None:
        return np.ones(t.size, dtype=bool)
    if callable(region):
        return np.asarray(region(pts, t), dtype=bool)
    keep = np.ones(t.size, dtype=bool)
    for axis, (lo, hi) in enumerate(region):
        if lo is not None:
            keep &= pts[:, axis] >= lo
        if hi is not None:
            keep &= pts[:, axis] <= hi
    return keep


def frames_to_data(stack, placement=None, region=None, domain=None):
    """One labelled record per valid pixel.

    ``region`` is a callable ``(pts, t) -> mask`` or per-axis ``(lo, hi)``
    bounds. Records that land outside ``domain`` are dropped. Returns
    ``(LabelledData, n_dropped)``.
    """
    placement = placement or Placement(ndim=domain.ndim if domain is not None else 2)
    pts, ts, Ts = [], [], []
    for f in stack.frames:
        fx, fy = f.pixel_centres()
        ok = f.mask.ravel()
        pts.append(placement.map(fx.ravel()[ok], fy.ravel()[ok]))
        ts.append(np.full(int(ok.sum()), f.time))
        Ts.append(f.values.ravel()[ok])
    if not pts:
        return LabelledData.empty(placement.ndim), 0
    pts = np.concatenate(pts)
    ts = np.concatenate(ts)
    Ts = np.concatenate(Ts)
    inside = domain.contains(pts) if domain is not None else np.ones(ts.size, dtype=bool)
    if domain is not None:
        inside &= (ts >= 0) & (ts <= domain.t_end * (1 + 1e-12))
    keep = inside & _region_mask(region, pts, ts)
    dropped = int((~inside).sum())
    return LabelledData(pts[keep], ts[keep], Ts[keep]), dropped

"""Affine maps between physical space-time/temperature and network units."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError

__all__ = ["ScalingSpec", "PhysDerivs", "physical_derivs", "DEFAULT_DELTA_T"]

DEFAULT_DELTA_T = 2702.0


@dataclass(frozen=True)
class ScalingSpec:
    """Each spatial axis [0, L] and [0, t_end] map to [-1, 1]; T = T0 + u * delta_T.

    ``input_dim`` may exceed ``len(lengths) + 1``: the extra inputs sit between
    the last spatial axis and time and are pinned to 0 (thin-wall case on the
    4-input network).
    """

    lengths: tuple
    t_end: float
    T0: float = 298.0
    delta_T: float = DEFAULT_DELTA_T
    input_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        if not self.lengths or any(v <= 0 for v in self.lengths) or self.t_end <= 0:
            raise StructuralError("axis lengths and t_end must be positive")
        if self.delta_T <= 0:
            raise StructuralError("delta_T must be positive")
        if self.input_dim == 0:
            object.__setattr__(self, "input_dim", len(self.lengths) + 1)
        if self.input_dim < len(self.lengths) + 1:
            raise StructuralError("input_dim smaller than spatial dims + time")

    @property
    def n_spatial(self):
        return len(self.lengths)

    @property
    def time_index(self):
        return self.input_dim - 1

    def scale_points(self, pts, t):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, self.n_spatial)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        out = np.zeros((pts.shape[0], self.input_dim))
        for i, length in enumerate(self.lengths):
            out[:, i] = 2.0 * pts[:, i] / length - 1.0
        out[:, -1] = 2.0 * t / self.t_end - 1.0
        return out

    def scale_point(self, *coords):
        """``scale_point(x, [y, [z,]] t)`` for a single point."""
        *xs, t = coords
        return self.scale_points(np.array([xs]), np.array([t]))[0]

    def unscale_points(self, scaled):
        scaled = np.atleast_2d(np.asarray(scaled, dtype=np.float64))
        pts = np.empty((scaled.shape[0], self.n_spatial))
        for i, length in enumerate(self.lengths):
            pts[:, i] = (scaled[:, i] + 1.0) * (0.5 * length)
        t = (scaled[:, -1] + 1.0) * (0.5 * self.t_end)
        return pts, t

    def unscale_temperature(self, u):
        return self.T0 + u * self.delta_T

    def scale_temperature(self, T):
        return (T - self.T0) / self.delta_T

    def axis_factor(self, i):
        """d(scaled)/d(physical) along spatial axis ``i``."""
        return 2.0 / self.lengths[i]

    @property
    def time_factor(self):
        return 2.0 / self.t_end


@dataclass
class PhysDerivs:
    """Temperature and its derivatives in SI units at a batch of points.

    Entries are arrays or tape nodes; ``grad`` and ``d2`` hold one entry per
    spatial axis (``d2`` may be empty when second derivatives were not needed).
    """

    T: object
    dT_dt: object
    grad: tuple
    d2: tuple = ()

    @property
    def laplacian(self):
        out = self.d2[0]
        for v in self.d2[1:]:
            out = out + v
        return out


def physical_derivs(channels, spec, with_second=True):
    """Chain rule from scaled-jet channels to physical derivatives.

    ``channels`` is the ``(C, N)`` jet (array or tape node), or a
    :class:`~hybridpinn.autodiff.DerivativeBundle`.
    """
    dT = spec.delta_T
    if hasattr(channels, "grad_inputs"):
        b = channels
        u = b.value
        gu = [b.grad_inputs[i] for i in range(spec.input_dim)]
        hu = [b.hess_diag[i] for i in range(len(b.hess_diag))]
    else:
        d = spec.input_dim
        u = channels[0]
        gu = [channels[1 + i] for i in range(d)]
        hu = [channels[1 + d + i] for i in range(spec.n_spatial)] if with_second else []
    T = spec.T0 + dT * u
    dT_dt = (dT * spec.time_factor) * gu[spec.time_index]
    grad = tuple((dT * spec.axis_factor(i)) * gu[i] for i in range(spec.n_spatial))
    d2 = ()
    if with_second and hu:
        d2 = tuple((dT * spec.axis_factor(i) ** 2) * hu[i] for i in range(spec.n_spatial))
    return PhysDerivs(T, dT_dt, grad, d2)

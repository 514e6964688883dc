"""Hot elementwise kernels.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy version.
The numba path is used when numba imports cleanly and the environment variable
``HYBRIDPINN_NO_NUMBA`` is unset or ``0``. Both paths compute the same
formulas; results agree to rounding.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.special import expit

_EMPTY3 = np.zeros((0, 0, 0))
_EMPTY_I = np.zeros(0, dtype=np.int64)


def _want_numba():
    flag = os.environ.get("HYBRIDPINN_NO_NUMBA", "0").strip().lower()
    if flag not in ("", "0", "false", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is an install dependency
        return False
    return True


USE_NUMBA = _want_numba()


def softplus(z):
    return np.logaddexp(0.0, z)


# ---------------------------------------------------------------------------
# numpy reference implementations


def _np_activation_derivs(z, a, kind, order, keep):
    if order == 0 and not keep:
        return None, None, None
    if kind == 0:
        d1 = 1.0 - a * a
        d2 = -2.0 * a * d1 if (order >= 1 or keep) else None
        d3 = -2.0 * d1 * (d1 - 2.0 * a * a) if (keep and order >= 2) else None
    else:
        s = expit(z)
        d1 = s
        d2 = s * (1.0 - s)
        d3 = d2 * (1.0 - 2.0 * s) if (keep and order >= 2) else None
    return d1, d2, d3


def _np_hess_channels(zg, zh, d1, d2, hd):
    out = d2[None] * zg[hd] ** 2
    if zh is not None:
        out = out + d1[None] * zh
    return out


def _np_activation_adjoint(abar, gbar, hbar, zg, zh, d1, d2, d3, hd, n_g, n_h):
    zbar = abar * d1
    zgbar = None
    zhbar = None
    if n_g:
        zbar = zbar + np.einsum("jnw,jnw->nw", gbar, zg) * d2
        zgbar = gbar * d1[None]
    if n_h:
        zgh = zg[hd]
        t = d3[None] * zgh * zgh
        if zh is not None:
            t = t + d2[None] * zh
        zbar = zbar + np.einsum("knw,knw->nw", hbar, t)
        contrib = 2.0 * hbar * d2[None] * zgh
        for k, j in enumerate(hd):
            zgbar[j] += contrib[k]
        zhbar = hbar * d1[None]
    return zbar, zgbar, zhbar


# ---------------------------------------------------------------------------
# numba implementations

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _nb_tanh_derivs(a, want_d3):
        n, m = a.shape
        d1 = np.empty((n, m))
        d2 = np.empty((n, m))
        d3 = np.empty((n, m) if want_d3 else (0, 0))
        for i in range(n):
            for k in range(m):
                t = a[i, k]
                s1 = 1.0 - t * t
                d1[i, k] = s1
                d2[i, k] = -2.0 * t * s1
                if want_d3:
                    d3[i, k] = -2.0 * s1 * (s1 - 2.0 * t * t)
        return d1, d2, d3

    @njit(cache=True)
    def _nb_hess_channels(zg, zh, has_zh, d1, d2, hd):
        nh = hd.shape[0]
        n, m = d1.shape
        out = np.empty((nh, n, m))
        for k in range(nh):
            j = hd[k]
            for i in range(n):
                for c in range(m):
                    g = zg[j, i, c]
                    v = d2[i, c] * g * g
                    if has_zh:
                        v += d1[i, c] * zh[k, i, c]
                    out[k, i, c] = v
        return out

    @njit(cache=True)
    def _nb_activation_adjoint(abar, gbar, hbar, zg, zh, has_zh, d1, d2, d3, hd, n_g, n_h):
        n, m = d1.shape
        zbar = np.empty((n, m))
        zgbar = np.empty((n_g, n, m))
        zhbar = np.empty((n_h, n, m))
        for i in range(n):
            for c in range(m):
                acc = abar[i, c] * d1[i, c]
                for j in range(n_g):
                    acc += gbar[j, i, c] * zg[j, i, c] * d2[i, c]
                    zgbar[j, i, c] = gbar[j, i, c] * d1[i, c]
                for k in range(n_h):
                    j = hd[k]
                    g = zg[j, i, c]
                    t = d3[i, c] * g * g
                    if has_zh:
                        t += d2[i, c] * zh[k, i, c]
                    acc += hbar[k, i, c] * t
                    zgbar[j, i, c] += 2.0 * hbar[k, i, c] * d2[i, c] * g
                    zhbar[k, i, c] = hbar[k, i, c] * d1[i, c]
                zbar[i, c] = acc
        return zbar, zgbar, zhbar

    @njit(cache=True)
    def _nb_bilinear(values, ox, oy, hx, hy, px, py):
        nx, ny = values.shape
        out = np.empty(px.shape[0])
        for p in range(px.shape[0]):
            fx = (px[p] - ox) / hx
            fy = (py[p] - oy) / hy
            eps = 1e-9
            if fx < -eps or fy < -eps or fx > nx - 1 + eps or fy > ny - 1 + eps:
                out[p] = np.nan
                continue
            fx = min(max(fx, 0.0), nx - 1.0)
            fy = min(max(fy, 0.0), ny - 1.0)
            i0 = min(int(np.floor(fx)), nx - 2) if nx > 1 else 0
            j0 = min(int(np.floor(fy)), ny - 2) if ny > 1 else 0
            tx = fx - i0
            ty = fy - j0
            i1 = i0 + 1 if nx > 1 else 0
            j1 = j0 + 1 if ny > 1 else 0
            out[p] = ((1 - tx) * (1 - ty) * values[i0, j0] + tx * (1 - ty) * values[i1, j0]
                      + (1 - tx) * ty * values[i0, j1] + tx * ty * values[i1, j1])
        return out

    @njit(cache=True)
    def _nb_block_mean(frame, factor):
        r = frame.shape[0] // factor
        c = frame.shape[1] // factor
        out = np.empty((r, c))
        for i in range(r):
            for j in range(c):
                s = 0.0
                cnt = 0
                for a in range(factor):
                    for b in range(factor):
                        v = frame[i * factor + a, j * factor + b]
                        if not np.isnan(v):
                            s += v
                            cnt += 1
                out[i, j] = s / cnt if cnt > 0 else np.nan
        return out


# ---------------------------------------------------------------------------
# dispatchers


def activation_derivs(z, a, kind, order, keep):
    """Derivatives of the activation at ``z`` (``a`` is its value).

    ``kind`` 0 is tanh, 1 is softplus.
    """
    if USE_NUMBA and kind == 0 and (order >= 1 or keep):
        d1, d2, d3 = _nb_tanh_derivs(np.ascontiguousarray(a), bool(keep and order >= 2))
        return d1, d2, (d3 if keep and order >= 2 else None)
    return _np_activation_derivs(z, a, kind, order, keep)


def hess_channels(zg, zh, d1, d2, hd):
    if USE_NUMBA:
        return _nb_hess_channels(zg, _EMPTY3 if zh is None else zh, zh is not None, d1, d2, hd)
    return _np_hess_channels(zg, zh, d1, d2, hd)


def activation_adjoint(abar, gbar, hbar, zg, zh, d1, d2, d3, hd, n_g, n_h):
    if USE_NUMBA:
        zbar, zgbar, zhbar = _nb_activation_adjoint(
            np.ascontiguousarray(np.broadcast_to(abar, d1.shape)),
            _EMPTY3 if gbar is None else np.ascontiguousarray(np.broadcast_to(gbar, (n_g,) + d1.shape)),
            _EMPTY3 if hbar is None else np.ascontiguousarray(np.broadcast_to(hbar, (n_h,) + d1.shape)),
            _EMPTY3 if zg is None else zg,
            _EMPTY3 if zh is None else zh,
            zh is not None,
            d1, d2, d1 if d3 is None else d3, hd, n_g, n_h)
        return zbar, (zgbar if n_g else None), (zhbar if n_h else None)
    return _np_activation_adjoint(abar, gbar, hbar, zg, zh, d1, d2, d3, hd, n_g, n_h)


def bilinear(values, origin, spacing, px, py):
    """Sample a 2D nodal field at points; NaN outside the grid."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    if USE_NUMBA:
        return _nb_bilinear(values, float(origin[0]), float(origin[1]),
                            float(spacing[0]), float(spacing[1]), px, py)
    return _np_bilinear(values, origin, spacing, px, py)


def _np_bilinear(values, origin, spacing, px, py):
    nx, ny = values.shape
    fx = (px - origin[0]) / spacing[0]
    fy = (py - origin[1]) / spacing[1]
    eps = 1e-9
    outside = (fx < -eps) | (fy < -eps) | (fx > nx - 1 + eps) | (fy > ny - 1 + eps)
    fx = np.clip(fx, 0.0, nx - 1.0)
    fy = np.clip(fy, 0.0, ny - 1.0)
    i0 = np.minimum(np.floor(fx).astype(np.int64), max(nx - 2, 0))
    j0 = np.minimum(np.floor(fy).astype(np.int64), max(ny - 2, 0))
    tx = fx - i0
    ty = fy - j0
    i1 = i0 + 1 if nx > 1 else i0
    j1 = j0 + 1 if ny > 1 else j0
    out = ((1 - tx) * (1 - ty) * values[i0, j0] + tx * (1 - ty) * values[i1, j0]
           + (1 - tx) * ty * values[i0, j1] + tx * ty * values[i1, j1])
    out[outside] = np.nan
    return out


def block_mean(frame, factor):
    """Mean over ``factor`` x ``factor`` blocks ignoring NaN; all-NaN block gives NaN."""
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    if USE_NUMBA:
        return _nb_block_mean(frame, int(factor))
    r = frame.shape[0] // factor
    c = frame.shape[1] // factor
    blocks = frame[: r * factor, : c * factor].reshape(r, factor, c, factor)
    valid = ~np.isnan(blocks)
    cnt = valid.sum(axis=(1, 3))
    s = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = s / cnt
    out[cnt == 0] = np.nan
    return out

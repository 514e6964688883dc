"""Batched input-derivative jets through a tanh/softplus MLP.

For every sample the network output u, its gradient with respect to all
inputs and the diagonal second derivatives along a chosen subset of inputs
are propagated layer by layer:

    z = W a + b,   dz_j = W da_j,   ddz_j = W dda_j
    a' = s(z),     da'_j = s'(z) dz_j,   dda'_j = s''(z) dz_j**2 + s'(z) ddz_j

:func:`jet_backward` is the exact adjoint of that recurrence and returns the
parameter gradients of any scalar function of the jet channels.

Channel layout of the returned ``(C, N)`` array: row 0 is u, rows ``1..D``
are du/dx_j for every input, rows ``D+1..`` are d2u/dx_j2 for ``hess_dims``
in order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels

__all__ = ["JetCache", "jet_forward", "jet_backward", "value_forward"]


@dataclass
class JetCache:
    order: int
    hess_dims: tuple
    n_inputs: int
    layers: list  # per layer: (A_in, Zg, Zh, d1, d2, d3)


def _layer_value(a, w, b):
    return a @ w.T + b


def value_forward(weights, biases, x):
    """Plain evaluation; the jet value channel goes through the identical path."""
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = _layer_value(a, w, b)
        a = _kernels.softplus(z) if i == last else np.tanh(z)
    return a


def jet_forward(weights, biases, x, order=2, hess_dims=(), keep=False):
    """Propagate value/gradient/Laplacian-diagonal channels.

    Returns ``(channels, cache)``; ``cache`` is ``None`` unless ``keep``.
    ``order`` 0 gives the value only, 1 adds input gradients, 2 adds the
    diagonal second derivatives along ``hess_dims``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, d = x.shape
    hess_dims = tuple(hess_dims) if order >= 2 else ()
    n_g = d if order >= 1 else 0
    n_h = len(hess_dims)
    last = len(weights) - 1
    cache_layers = [] if keep else None

    a = x
    g = None  # (n_g, N, width) input gradients of the current activations
    h = None  # (n_h, N, width)
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = _layer_value(a, w, b)
        if n_g:
            if i == 0:
                zg = np.broadcast_to(w.T[:, None, :], (d, n, w.shape[0]))
            else:
                zg = (g.reshape(-1, g.shape[-1]) @ w.T).reshape(n_g, n, w.shape[0])
        else:
            zg = None
        if n_h:
            if i == 0:
                zh = None
            else:
                zh = (h.reshape(-1, h.shape[-1]) @ w.T).reshape(n_h, n, w.shape[0])
        else:
            zh = None

        kind = 1 if i == last else 0
        a_new = _kernels.softplus(z) if kind else np.tanh(z)
        d1, d2, d3 = _kernels.activation_derivs(z, a_new, kind, order, keep)
        if n_g:
            g_new = d1[None] * zg
        else:
            g_new = None
        if n_h:
            h_new = _kernels.hess_channels(zg, zh, d1, d2, np.asarray(hess_dims, dtype=np.int64))
        else:
            h_new = None
        if keep:
            cache_layers.append((a, g, h, zg, zh, d1, d2, d3))
        a, g, h = a_new, g_new, h_new

    chans = [a[:, 0]]
    if n_g:
        chans.extend(g[j, :, 0] for j in range(n_g))
    if n_h:
        chans.extend(h[k, :, 0] for k in range(n_h))
    out = np.stack(chans)
    cache = JetCache(order, hess_dims, d, cache_layers) if keep else None
    return out, cache


def jet_backward(weights, cache, adj):
    """Parameter gradients given the adjoint ``adj`` (C, N) of the jet output.

    Returns ``(grad_weights, grad_biases)`` lists matching ``weights``.
    """
    hess_dims = cache.hess_dims
    d = cache.n_inputs
    n_g = d if cache.order >= 1 else 0
    n_h = len(hess_dims)
    adj = np.asarray(adj, dtype=np.float64)
    n = adj.shape[1]

    abar = adj[0][:, None]
    gbar = adj[1:1 + n_g][:, :, None] if n_g else None
    hbar = adj[1 + n_g:1 + n_g + n_h][:, :, None] if n_h else None

    gw = [None] * len(weights)
    gb = [None] * len(weights)
    hd = np.asarray(hess_dims, dtype=np.int64)
    for i in range(len(weights) - 1, -1, -1):
        w = weights[i]
        a_in, g_in, h_in, zg, zh, d1, d2, d3 = cache.layers[i]
        zbar, zgbar, zhbar = _kernels.activation_adjoint(
            abar, gbar, hbar, zg, zh, d1, d2, d3, hd, n_g, n_h)
        gwi = zbar.T @ a_in
        if n_g:
            if i == 0:
                # input gradients are unit vectors
                gwi = gwi + zgbar.sum(axis=1).T
            else:
                gwi = gwi + zgbar.reshape(-1, zgbar.shape[-1]).T @ g_in.reshape(-1, g_in.shape[-1])
        if n_h and i > 0:
            gwi = gwi + zhbar.reshape(-1, zhbar.shape[-1]).T @ h_in.reshape(-1, h_in.shape[-1])
        gw[i] = gwi
        gb[i] = zbar.sum(axis=0)
        if i > 0:
            abar = zbar @ w
            gbar = (zgbar.reshape(-1, w.shape[0]) @ w).reshape(n_g, n, w.shape[1]) if n_g else None
            hbar = (zhbar.reshape(-1, w.shape[0]) @ w).reshape(n_h, n, w.shape[1]) if n_h else None
    return gw, gb

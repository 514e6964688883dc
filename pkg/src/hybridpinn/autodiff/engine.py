"""Network-aware entry points: input-derivative bundles and loss gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import network as _net
from ..errors import NumericalError, StructuralError
from . import tape
from .jet import jet_backward, jet_forward


@dataclass(frozen=True)
class DerivativeBundle:
    """u, du/d(inputs) and the diagonal d2u/d(spatial inputs)2, in scaled coordinates."""

    value: float
    grad_inputs: np.ndarray
    hess_diag: np.ndarray


def _spatial_dims(n_inputs):
    return tuple(range(n_inputs - 1))


def eval_with_input_derivs(params, scaled_point, spec=None):
    """Exact derivative bundle at one scaled point (last input is time)."""
    x = np.asarray(scaled_point, dtype=np.float64).reshape(1, -1)
    if spec is not None:
        params.check(spec)
    if x.shape[1] != params.weights[0].shape[1]:
        raise StructuralError(
            f"point has {x.shape[1]} inputs, network expects {params.weights[0].shape[1]}")
    d = x.shape[1]
    hd = _spatial_dims(d)
    ch, _ = jet_forward(params.weights, params.biases, x, order=2, hess_dims=hd)
    return DerivativeBundle(float(ch[0, 0]), ch[1:1 + d, 0].copy(), ch[1 + d:, 0].copy())


class TracedParams:
    """Network parameters wrapped as tape leaves."""

    def __init__(self, params):
        self.params = params
        self.weights = [tape.Var(w) for w in params.weights]
        self.biases = [tape.Var(b) for b in params.biases]
        self.mu_raw = {n: tape.Var(np.float64(params.mu[n].raw)) for n in params.mu_names}

    def leaves(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.extend(self.mu_raw[n] for n in self.params.mu_names)
        return out

    def mu(self, name):
        """Physical value of a trainable parameter as a tape node."""
        return _net.MU_SCALES[name] * tape.softplus(self.mu_raw[name])

    def jet(self, x, order=2, hess_dims=()):
        """Jet channels ``(C, N)`` as one tape node with the exact parameter VJP."""
        ws = [w.value for w in self.weights]
        bs = [b.value for b in self.biases]
        out, cache = jet_forward(ws, bs, x, order=order, hess_dims=hess_dims, keep=True)
        holder = {}

        def grads(g):
            key = id(g)
            if holder.get("key") != key:
                holder["key"] = key
                holder["val"] = jet_backward(ws, cache, g)
            return holder["val"]

        parents = []
        for i in range(len(ws)):
            parents.append((self.weights[i], lambda g, i=i: grads(g)[0][i]))
            parents.append((self.biases[i], lambda g, i=i: grads(g)[1][i]))
        return tape.Var.custom(out, parents)


def value_and_param_gradient(params, loss_fn):
    """Loss value and d(loss)/d(theta, mu) as a flat vector.

    ``loss_fn`` receives a :class:`TracedParams` and returns a scalar tape node.
    The vector follows :meth:`NetworkParams.flatten`; non-trainable mu entries
    are zero.
    """
    tp = TracedParams(params)
    out = loss_fn(tp)
    if not isinstance(out, tape.Var):
        return float(out), np.zeros(params.n_theta + len(params.mu))
    val = float(out.value)
    if not np.isfinite(val):
        raise NumericalError(f"non-finite loss {val}", point=getattr(out, "point", None))
    grads = tape.backward(out, tp.leaves())
    flat = []
    for i in range(len(params.weights)):
        flat.append(grads[2 * i].ravel())
        flat.append(grads[2 * i + 1].ravel())
    n_layers = len(params.weights)
    mu_g = np.array([float(g) for g in grads[2 * n_layers:]], dtype=np.float64)
    flat.append(mu_g)
    vec = np.concatenate(flat)
    vec[~params.trainable_mask()] = 0.0
    return val, vec


def loss_param_gradient(params, loss_fn):
    return value_and_param_gradient(params, loss_fn)[1]

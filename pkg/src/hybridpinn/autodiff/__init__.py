"""Exact derivatives for the PINN: input jets and reverse-mode parameter gradients."""
from . import tape
from .jet import jet_backward, jet_forward, value_forward
from .engine import (DerivativeBundle, TracedParams, eval_with_input_derivs,
                     loss_param_gradient, value_and_param_gradient)

__all__ = [
    "tape",
    "jet_forward",
    "jet_backward",
    "value_forward",
    "DerivativeBundle",
    "TracedParams",
    "eval_with_input_derivs",
    "loss_param_gradient",
    "value_and_param_gradient",
]

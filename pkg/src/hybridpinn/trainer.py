"""Adam training loop with history, warm start and divergence abort."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import loss as _loss
from . import network
from .errors import DomainError, NumericalError, TrainingAborted

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "TrainResult", "adam_step", "train", "evaluate", "write_history_csv"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 2e-4
    mu_learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 100
    divergence_threshold: float = 1e6
    divergence_patience: int = 100

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise DomainError("learning rate must be positive")
        if self.mu_learning_rate is not None and not self.mu_learning_rate > 0:
            raise DomainError("mu learning rate must be positive")
        if self.eval_every < 1:
            raise DomainError("eval_every must be >= 1")


@dataclass
class TrainResult:
    params: network.NetworkParams
    state: network.TrainerState
    history: list = field(default_factory=list)

    @property
    def final(self):
        return self.history[-1]


def adam_step(theta, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``lr`` may be a per-entry array.

    Returns ``(theta, m, v)`` with ``step`` already counting this update.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    return theta - lr * mhat / (np.sqrt(vhat) + eps), m, v


def _record(epoch, bd, params, validation, scaling):
    row = {"epoch": epoch, "L_b": bd.L_b, "L_i": bd.L_i, "L_r": bd.L_r, "L_d": bd.L_d,
           "total": bd.total, "nmse": float("nan"), "rmse_K": float("nan")}
    if validation is not None and len(validation):
        row["nmse"], row["rmse_K"] = evaluate(params, validation, scaling)
    for name, val in params.mu_values().items():
        row[f"mu_{name}"] = val
    return row


def train(params, colloc, problem, weights=_loss.LossWeights(), cfg=TrainConfig(), state=None,
          validation=None, callback=None):
    """Minimize the weighted loss with Adam.

    History rows are taken at the starting epoch, every ``eval_every`` epochs
    and after the last update, with nmse/rmse_K against ``validation`` when
    given. Passing the ``state`` of an earlier run resumes
    its Adam moments and epoch counter. Raises :class:`TrainingAborted` (with
    the partial history) on a non-finite loss or when the total stays above
    ``divergence_threshold`` for ``divergence_patience`` consecutive epochs.
    """
    theta = params.flatten()
    n = theta.size
    if state is None or state.m is None:
        state = network.TrainerState(epoch=state.epoch if state else 0, adam_step=0,
                                     m=np.zeros(n), v=np.zeros(n),
                                     metadata=dict(state.metadata) if state else {})
    elif state.m.size != n:
        raise DomainError("warm-start optimizer state does not match the parameter count")
    m, v, step = state.m.copy(), state.v.copy(), state.adam_step
    lr = np.full(n, cfg.learning_rate)
    if cfg.mu_learning_rate is not None:
        lr[params.n_theta:] = cfg.mu_learning_rate
    mask = params.trainable_mask()
    start = state.epoch
    history = []
    bad = 0
    cur = params
    try:
        for k in range(cfg.epochs):
            epoch = start + k
            bd, g = _loss.assemble_with_grad(cur, colloc, problem, weights)
            if k % cfg.eval_every == 0:
                history.append(_record(epoch, bd, cur, validation, problem.scaling))
                log.info("epoch %d total %.6e", epoch, bd.total)
                if callback is not None:
                    callback(epoch, bd, cur)
            bad = bad + 1 if bd.total > cfg.divergence_threshold else 0
            if bad >= cfg.divergence_patience:
                raise TrainingAborted(
                    f"loss above {cfg.divergence_threshold:g} for {bad} consecutive epochs",
                    history, cur)
            g = np.where(mask, g, 0.0)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient at epoch {epoch}")
            step += 1
            theta, m, v = adam_step(theta, g, m, v, step, lr, cfg.beta1, cfg.beta2, cfg.eps)
            theta = np.where(mask, theta, params.flatten())
            cur = params.unflatten(theta)
        bd = _loss.assemble(cur, colloc, problem, weights)
        if not np.isfinite(bd.total):
            raise NumericalError(f"non-finite loss {bd.total}")
    except NumericalError as exc:
        raise TrainingAborted(f"numerical failure: {exc}", history, cur) from exc
    end = start + cfg.epochs
    history.append(_record(end, bd, cur, validation, problem.scaling))
    new_state = network.TrainerState(epoch=end, adam_step=step, m=m, v=v,
                                     metadata=dict(state.metadata))
    return TrainResult(cur, new_state, history)


def evaluate(params, data, scaling):
    """``(nmse, rmse)`` of the network against labelled data.

    nmse is the mean squared error in normalized temperature units, rmse is
    in kelvin.
    """
    if len(data) == 0:
        raise DomainError("no evaluation data")
    u = network.forward(params, scaling.scale_points(data.pts, data.t))
    err = u - scaling.scale_temperature(data.T)
    nmse = float(np.mean(err * err))
    return nmse, float(np.sqrt(nmse) * scaling.delta_T)


def predict_temperature(params, scaling, pts, t):
    return scaling.unscale_temperature(network.forward(params, scaling.scale_points(pts, t)))


def write_history_csv(history, path):
    if not history:
        raise DomainError("empty history")
    cols = list(history[0])
    for row in history[1:]:
        cols.extend(c for c in row if c not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history:
            w.writerow([_fmt(row.get(c, "")) for c in cols])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v

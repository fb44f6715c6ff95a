"""Censored discrete-time likelihood, the two-task loss, and optimization.

The per-patient loss is the standard discrete-time survival likelihood: an
event in bin k contributes -[ln h_k + sum_{j<k} ln(1-h_j)]; a censoring in
bin k contributes survival through bin k inclusive, -sum_{j<=k} ln(1-h_j).
Optimization is AdamW with decoupled weight decay, a reduce-on-plateau
learning-rate schedule, and early stopping with best-snapshot retention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .heads import TimeBins

CLAMP_EPS = 1e-12
IMPROVE_TOL = 1e-8


@dataclass(frozen=True)
class SurvivalLabel:
    """Observed follow-up in years and event flag (1 = event, 0 = censored)."""

    time: float
    event: int

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time < 0:
            raise ValueError(f"survival time must be finite and >= 0, got {self.time}")
        if self.event not in (0, 1):
            raise ValueError(f"event flag must be 0 or 1, got {self.event}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")


def label_to_bin(time: float, bins: TimeBins) -> int:
    """Largest k with edges[k] <= time; times at or past the horizon clamp to K-1."""
    if time < 0:
        raise ValueError(f"negative time {time}")
    k = int(np.searchsorted(bins.edges, time, side="right")) - 1
    return min(k, bins.count - 1)


def clamp01(h: Tensor, eps: float = CLAMP_EPS) -> Tensor:
    """On-tape clamp of every entry into [eps, 1-eps] via relu composition."""
    lo = ad.constant(np.full(h.shape, eps))
    hi = ad.constant(np.full(h.shape, 1.0 - eps))
    return ad.sub(ad.add(lo, ad.relu(ad.sub(h, lo))), ad.relu(ad.sub(h, hi)))


def discrete_nll(hazards: Tensor, label: SurvivalLabel, bins: TimeBins) -> Tensor:
    """Negative log-likelihood of one patient given the 1 x K hazard row."""
    k = label_to_bin(label.time, bins)
    K = bins.count
    if hazards.shape != (1, K):
        raise ad.ShapeMismatchError("discrete-nll", hazards.shape, (1, K))
    event_mask = np.zeros((1, K))
    surv_mask = np.zeros((1, K))
    if label.event == 1:
        event_mask[0, k] = 1.0
        surv_mask[0, :k] = 1.0
    else:
        surv_mask[0, :k + 1] = 1.0
    h = clamp01(hazards)
    log_h = ad.log(h)
    log_s = ad.log(ad.sub(ad.constant(np.ones((1, K))), h))
    ll = ad.sum_all(ad.add(ad.mul(ad.constant(event_mask), log_h),
                           ad.mul(ad.constant(surv_mask), log_s)))
    return ad.negate(ll)


def combined_loss(os_nll: Tensor, dfs_nll: Tensor, weights: LossWeights) -> Tensor:
    """alpha * OS + beta * DFS for one patient."""
    a = ad.constant([[weights.alpha]])
    b = ad.constant([[weights.beta]])
    return ad.add(ad.mul(a, os_nll), ad.mul(b, dfs_nll))


def batch_mean(losses: list[Tensor]) -> Tensor:
    """Mean of per-patient scalar losses, accumulated in list order."""
    if not losses:
        raise ValueError("empty loss batch")
    acc = losses[0]
    for term in losses[1:]:
        acc = ad.add(acc, term)
    return ad.mul(acc, ad.constant([[1.0 / len(losses)]]))


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class OptimizerState:
    """Moment accumulators plus scheduler and early-stop bookkeeping.

    The plateau schedule and the early stop each track their own best-seen
    validation loss so the two ops stay independent and order-insensitive;
    both use the same strict-improvement tolerance.
    """

    lr: float
    moments: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    step_count: int = 0
    plateau_best: float = np.inf
    plateau_counter: int = 0
    stop_best: float = np.inf
    stop_counter: int = 0

    @property
    def best_val(self) -> float:
        return self.stop_best

    def would_improve(self, val_loss: float) -> bool:
        return val_loss < self.stop_best - IMPROVE_TOL


def adamw_step(params: list[tuple[str, Tensor]], grads: dict[Tensor, Tensor],
               state: OptimizerState, hyper: AdamHyper) -> None:
    """Decoupled-weight-decay Adam update, applied to the leaves in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for name, p in params:
        g = grads[p].data
        if not np.isfinite(g).all():
            raise ad.NonFiniteError(f"non-finite gradient for parameter {name}")
        m, v = state.moments.get(id(p), (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * (g * g)
        state.moments[id(p)] = (m, v)
        update = (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        p.data -= state.lr * (update + hyper.weight_decay * p.data)


def plateau_schedule(state: OptimizerState, val_loss: float, factor: float,
                     patience: int) -> None:
    """Multiply lr by `factor` once the stall counter exceeds `patience`."""
    if not (0.0 < factor < 1.0) or patience < 1:
        raise ValueError("factor must be in (0,1) and patience >= 1")
    if val_loss < state.plateau_best - IMPROVE_TOL:
        state.plateau_best = val_loss
        state.plateau_counter = 0
        return
    state.plateau_counter += 1
    if state.plateau_counter > patience:
        state.lr *= factor
        state.plateau_counter = 0


def early_stop(state: OptimizerState, val_loss: float, patience: int) -> bool:
    """True once validation has not improved for `patience` evaluations."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if val_loss < state.stop_best - IMPROVE_TOL:
        state.stop_best = val_loss
        state.stop_counter = 0
        return False
    state.stop_counter += 1
    return state.stop_counter >= patience

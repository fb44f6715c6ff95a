"""LSTM trajectory integrator: snapshot sequence -> summary vector h*.

The snapshots z_0..z_{T-1} are consumed by a single-layer LSTM from a zero
initial state; h* is the elementwise mean of all hidden states so no single
step dominates. The integrator-ablation mode bypasses the LSTM and averages
the raw snapshots instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .evolution import TrajectorySnapshots, uniform_weight


@dataclass
class LstmParams:
    """Gate weights act on [z_t ; h_{t-1}] (width d + d_h); biases are 1 x d_h."""

    w_i: Tensor
    b_i: Tensor
    w_f: Tensor
    b_f: Tensor
    w_g: Tensor
    b_g: Tensor
    w_o: Tensor
    b_o: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.w_i.cols

    @property
    def input_dim(self) -> int:
        return self.w_i.rows - self.hidden_dim

    def named_leaves(self) -> list[tuple[str, Tensor]]:
        return [("lstm.w_i", self.w_i), ("lstm.b_i", self.b_i),
                ("lstm.w_f", self.w_f), ("lstm.b_f", self.b_f),
                ("lstm.w_g", self.w_g), ("lstm.b_g", self.b_g),
                ("lstm.w_o", self.w_o), ("lstm.b_o", self.b_o)]


def init_lstm(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LstmParams:
    fan_in = input_dim + hidden_dim

    def w(name):
        return uniform_weight(rng, fan_in, hidden_dim, name)

    def b(name):
        return ad.parameter(np.zeros((1, hidden_dim)), name=name)

    return LstmParams(w("lstm.w_i"), b("lstm.b_i"), w("lstm.w_f"), b("lstm.b_f"),
                      w("lstm.w_g"), b("lstm.b_g"), w("lstm.w_o"), b("lstm.b_o"))


def lstm_step(z: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """Standard cell: c' = f*c + i*g, h' = o*tanh(c')."""
    if z.cols != params.input_dim or h.cols != params.hidden_dim:
        raise ad.ShapeMismatchError("lstm-step", z.shape, h.shape,
                                    (params.input_dim, params.hidden_dim))
    zh = ad.concat_cols(z, h)
    i = ad.sigmoid(ad.add(ad.matmul(zh, params.w_i), params.b_i))
    f = ad.sigmoid(ad.add(ad.matmul(zh, params.w_f), params.b_f))
    g = ad.tanh(ad.add(ad.matmul(zh, params.w_g), params.b_g))
    o = ad.sigmoid(ad.add(ad.matmul(zh, params.w_o), params.b_o))
    c2 = ad.add(ad.mul(f, c), ad.mul(i, g))
    h2 = ad.mul(o, ad.tanh(c2))
    return h2, c2


def _mean_of(rows: list[Tensor]) -> Tensor:
    acc = rows[0]
    for r in rows[1:]:
        acc = ad.add(acc, r)
    scale = ad.constant(np.full(acc.shape, 1.0 / len(rows)))
    return ad.mul(acc, scale)


def integrate(snapshots: TrajectorySnapshots, params: LstmParams) -> Tensor:
    """Trajectory summary h*: mean of the LSTM hidden states h_1..h_T."""
    if len(snapshots) == 0:
        raise ValueError("cannot integrate an empty snapshot sequence")
    d_h = params.hidden_dim
    h = ad.constant(np.zeros((1, d_h)))
    c = ad.constant(np.zeros((1, d_h)))
    hidden: list[Tensor] = []
    for z in snapshots.z:
        h, c = lstm_step(z, h, c, params)
        hidden.append(h)
    return _mean_of(hidden)


def integrate_mean(snapshots: TrajectorySnapshots) -> Tensor:
    """Integrator ablation: elementwise mean of the raw snapshots."""
    if len(snapshots) == 0:
        raise ValueError("cannot integrate an empty snapshot sequence")
    return _mean_of(snapshots.z)

"""Time-conditioned residual evolution of patient-graph node states.

Starting from the embedded node states H0, a message-passing operator is
applied T times. Each step concatenates a trainable time embedding onto
every node state, computes an update through one hidden message layer plus a
linear output projection, and adds it residually (so zero weights leave the
state untouched). The mean-pooled state after each update is one snapshot of
the patient's latent trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EDGE_ATTR_DIM, PatientGraph

BACKBONES = ("graphsage", "gcn", "gat")


def uniform_weight(rng: np.random.Generator, fan_in: int, fan_out: int,
                   name: str) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=name)


def _bias(fan_out: int, name: str) -> Tensor:
    return ad.parameter(np.zeros((1, fan_out)), name=name)


@dataclass
class TimeEmbeddingTable:
    """Trainable T x d_t table; row t conditions evolution step t."""

    table: Tensor

    @property
    def steps(self) -> int:
        return self.table.rows


def init_time_table(steps: int, time_dim: int, rng: np.random.Generator) -> TimeEmbeddingTable:
    return TimeEmbeddingTable(uniform_weight(rng, steps, time_dim, "time_table"))


def time_embedding(t: int, table: TimeEmbeddingTable) -> Tensor:
    """Row t of the table as a 1 x d_t tensor on the tape."""
    if not (0 <= t < table.steps):
        raise IndexError(f"time step {t} outside table with {table.steps} rows")
    sel = np.zeros((1, table.steps))
    sel[0, t] = 1.0
    return ad.matmul(ad.constant(sel), table.table)


@dataclass
class EvolutionParams:
    """Residual operator weights plus the time-embedding table.

    The operator is one message layer (ReLU) followed by a linear output
    projection back to width d. graphsage/gat consume [x_j ; a_ij] neighbor
    messages through w_neigh; gcn uses the symmetric-normalized adjacency and
    ignores edge attributes; gat additionally carries single-head additive
    attention parameters.
    """

    backbone: str
    w_self: Tensor
    w_neigh: Tensor | None
    b_msg: Tensor
    w_out: Tensor
    b_out: Tensor
    time_table: TimeEmbeddingTable
    attn_u: Tensor | None = None
    attn_b: Tensor | None = None
    attn_v: Tensor | None = None

    def named_leaves(self) -> list[tuple[str, Tensor]]:
        pairs = [("op.w_self", self.w_self), ("op.b_msg", self.b_msg),
                 ("op.w_out", self.w_out), ("op.b_out", self.b_out),
                 ("op.time_table", self.time_table.table)]
        for label, t in (("op.w_neigh", self.w_neigh), ("op.attn_u", self.attn_u),
                         ("op.attn_b", self.attn_b), ("op.attn_v", self.attn_v)):
            if t is not None:
                pairs.append((label, t))
        return pairs

    def zero_weights(self) -> None:
        """Zero every leaf in place (identity-trajectory configuration)."""
        for _, leaf in self.named_leaves():
            leaf.data[:] = 0.0


def init_evolution(backbone: str, hidden_dim: int, time_dim: int, steps: int,
                   message_dim: int, rng: np.random.Generator,
                   attention_dim: int = 16) -> EvolutionParams:
    if backbone not in BACKBONES:
        raise ValueError(f"unknown backbone {backbone!r}; expected one of {BACKBONES}")
    d_in = hidden_dim + time_dim
    w_neigh = None
    attn_u = attn_b = attn_v = None
    if backbone in ("graphsage", "gat"):
        w_neigh = uniform_weight(rng, d_in + EDGE_ATTR_DIM, message_dim, "op.w_neigh")
    if backbone == "gat":
        attn_u = uniform_weight(rng, 2 * d_in + EDGE_ATTR_DIM, attention_dim, "op.attn_u")
        attn_b = _bias(attention_dim, "op.attn_b")
        attn_v = uniform_weight(rng, attention_dim, 1, "op.attn_v")
    return EvolutionParams(
        backbone=backbone,
        w_self=uniform_weight(rng, d_in, message_dim, "op.w_self"),
        w_neigh=w_neigh,
        b_msg=_bias(message_dim, "op.b_msg"),
        w_out=uniform_weight(rng, message_dim, hidden_dim, "op.w_out"),
        b_out=_bias(hidden_dim, "op.b_out"),
        time_table=init_time_table(steps, time_dim, rng),
        attn_u=attn_u,
        attn_b=attn_b,
        attn_v=attn_v,
    )


class GraphCache:
    """Per-graph constants shared by all evolution steps of one forward pass."""

    def __init__(self, graph: PatientGraph, backbone: str):
        n = graph.num_nodes
        self.n = n
        in_arcs = graph.in_neighbors()
        if backbone == "graphsage":
            # Mean over in-neighbors of [x_j ; a_ij] factors into a
            # row-normalized adjacency matmul plus a constant attr-mean block.
            nb = np.zeros((n, n))
            attr_mean = np.zeros((n, EDGE_ATTR_DIM))
            for i, arcs in enumerate(in_arcs):
                if not arcs:
                    continue  # isolated node: neighbor term stays zero
                for j, attr in arcs:
                    nb[i, j] += 1.0
                    attr_mean[i] += attr
                nb[i] /= len(arcs)
                attr_mean[i] /= len(arcs)
            self.neighbor_mean = ad.constant(nb)
            self.attr_mean = ad.constant(attr_mean)
        elif backbone == "gcn":
            a = np.eye(n)
            for i, arcs in enumerate(in_arcs):
                for j, _ in arcs:
                    a[i, j] = 1.0
            deg = a.sum(axis=1)
            inv_sqrt = 1.0 / np.sqrt(deg)
            self.norm_adj = ad.constant(inv_sqrt[:, None] * a * inv_sqrt[None, :])
        elif backbone == "gat":
            self.in_arcs = [[(j, ad.constant(attr.reshape(1, -1))) for j, attr in arcs]
                            for arcs in in_arcs]
            self.selectors = []
            for i in range(n):
                sel = np.zeros((1, n))
                sel[0, i] = 1.0
                self.selectors.append(ad.constant(sel))
        else:
            raise ValueError(f"unknown backbone {backbone!r}")


def _message(x: Tensor, cache: GraphCache, params: EvolutionParams) -> Tensor:
    if params.backbone == "graphsage":
        agg = ad.concat_cols(ad.matmul(cache.neighbor_mean, x), cache.attr_mean)
        pre = ad.add(ad.add(ad.matmul(x, params.w_self), ad.matmul(agg, params.w_neigh)),
                     params.b_msg)
    elif params.backbone == "gcn":
        pre = ad.add(ad.matmul(ad.matmul(cache.norm_adj, x), params.w_self), params.b_msg)
    else:  # gat: single-head additive attention over in-neighbors
        node_rows = [ad.matmul(sel, x) for sel in cache.selectors]
        agg_rows = []
        for i in range(cache.n):
            arcs = cache.in_arcs[i]
            if not arcs:
                agg_rows.append(ad.constant(np.zeros((1, x.cols + EDGE_ATTR_DIM))))
                continue
            scores, msgs = [], []
            for j, attr in arcs:
                pair = ad.concat_cols(node_rows[i], node_rows[j], attr)
                hidden = ad.tanh(ad.add(ad.matmul(pair, params.attn_u), params.attn_b))
                scores.append(ad.matmul(hidden, params.attn_v))
                msgs.append(ad.concat_cols(node_rows[j], attr))
            alpha = ad.softmax_rows(ad.concat_cols(*scores) if len(scores) > 1 else scores[0])
            agg_rows.append(ad.matmul(alpha, ad.stack_rows(msgs)))
        agg = ad.stack_rows(agg_rows)
        pre = ad.add(ad.add(ad.matmul(x, params.w_self), ad.matmul(agg, params.w_neigh)),
                     params.b_msg)
    return ad.relu(pre)


def residual_step(h: Tensor, e_t: Tensor, graph: PatientGraph, params: EvolutionParams,
                  cache: GraphCache | None = None) -> Tensor:
    """Incremental update dH for one step: operator applied to [H ; e_t]."""
    if cache is None:
        cache = GraphCache(graph, params.backbone)
    x = ad.concat_cols(h, ad.broadcast_row(e_t, h.rows))
    m = _message(x, cache, params)
    return ad.add(ad.matmul(m, params.w_out), params.b_out)


def readout(h: Tensor) -> Tensor:
    """Graph-level snapshot: column-wise mean over present-node rows."""
    if h.rows == 0:
        raise ValueError("readout of empty node-state matrix")
    return ad.mean_rows(h)


@dataclass
class TrajectorySnapshots:
    """z_0..z_{T-1}, each the readout taken after one residual update."""

    z: list[Tensor]
    h_seq: list[Tensor] | None = None

    def __len__(self) -> int:
        return len(self.z)


def evolve(h0: Tensor, graph: PatientGraph, params: EvolutionParams, horizon: int,
           collect_states: bool = False) -> TrajectorySnapshots:
    """Roll the residual operator forward `horizon` steps from H0."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if horizon > params.time_table.steps:
        raise IndexError(f"horizon {horizon} exceeds time table with "
                         f"{params.time_table.steps} rows")
    cache = GraphCache(graph, params.backbone)
    h = h0
    snapshots: list[Tensor] = []
    states: list[Tensor] | None = [h0] if collect_states else None
    for t in range(horizon):
        delta = residual_step(h, time_embedding(t, params.time_table), graph, params, cache)
        h = ad.add(h, delta)
        if not np.isfinite(h.data).all():
            raise ad.NonFiniteError(f"node states diverged at evolution step {t}")
        snapshots.append(readout(h))
        if states is not None:
            states.append(h)
    return TrajectorySnapshots(z=snapshots, h_seq=states)


def static_snapshot(h0: Tensor) -> TrajectorySnapshots:
    """Zero-update variant: the single snapshot is the readout of H0."""
    return TrajectorySnapshots(z=[readout(h0)])

"""Row-stacked multi-patient forward pass for training throughput.

Message passing over a batch factors into one block-diagonal matmul, and the
LSTM, heads, and likelihood act row-wise, so a whole batch can share one
tape with a few dozen large nodes instead of thousands of tiny ones. The
math is identical to the per-patient path (which stays the reference
implementation); only graphsage and gcn have a batched form, gat falls back.

Layout: node rows of patient p occupy a contiguous block, snapshots and
summaries keep one row per patient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EDGE_ATTR_DIM, NodeKind, PatientGraph
from .heads import TimeBins
from .model import FullModel
from .objective import LossWeights, SurvivalLabel, clamp01, label_to_bin
from .trajectory import LstmParams, lstm_step

BATCHABLE_BACKBONES = ("graphsage", "gcn")

TrainItem = tuple[PatientGraph, SurvivalLabel, SurvivalLabel]  # graph, dfs, os


@dataclass
class _BatchConstants:
    n_patients: int
    n_rows: int
    pool: Tensor                       # n_patients x n_rows readout weights
    mixer: Tensor                      # n_rows x n_rows block-diagonal operator
    attr_mean: Tensor | None           # n_rows x 3 (graphsage only)
    kind_feats: dict[NodeKind, Tensor]
    kind_place: dict[NodeKind, Tensor]
    masks: dict[str, tuple[Tensor, Tensor]]  # task -> (event mask, survival mask)


def _nll_masks(labels: list[SurvivalLabel], bins: TimeBins) -> tuple[Tensor, Tensor]:
    n, K = len(labels), bins.count
    event = np.zeros((n, K))
    surv = np.zeros((n, K))
    for i, lab in enumerate(labels):
        k = label_to_bin(lab.time, bins)
        if lab.event == 1:
            event[i, k] = 1.0
            surv[i, :k] = 1.0
        else:
            surv[i, :k + 1] = 1.0
    return ad.constant(event), ad.constant(surv)


def build_batch(items: list[TrainItem], backbone: str, bins: TimeBins) -> _BatchConstants:
    if backbone not in BATCHABLE_BACKBONES:
        raise ValueError(f"backbone {backbone!r} has no batched form")
    graphs = [g for g, _, _ in items]
    n_patients = len(graphs)
    sizes = [g.num_nodes for g in graphs]
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    n_rows = int(offsets[-1])

    pool = np.zeros((n_patients, n_rows))
    mixer = np.zeros((n_rows, n_rows))
    attr_mean = np.zeros((n_rows, EDGE_ATTR_DIM)) if backbone == "graphsage" else None
    kind_rows: dict[NodeKind, list[tuple[int, np.ndarray]]] = {}

    for p, g in enumerate(graphs):
        base = offsets[p]
        pool[p, base:base + sizes[p]] = 1.0 / sizes[p]
        for local, kind in enumerate(g.order):
            kind_rows.setdefault(kind, []).append((base + local, g.nodes[kind].features))
        in_arcs = g.in_neighbors()
        if backbone == "graphsage":
            for i, arcs in enumerate(in_arcs):
                if not arcs:
                    continue
                for j, attr in arcs:
                    mixer[base + i, base + j] += 1.0
                    attr_mean[base + i] += attr
                mixer[base + i] /= len(arcs)
                attr_mean[base + i] /= len(arcs)
        else:
            a = np.eye(sizes[p])
            for i, arcs in enumerate(in_arcs):
                for j, _ in arcs:
                    a[i, j] = 1.0
            inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
            mixer[base:base + sizes[p], base:base + sizes[p]] = \
                inv_sqrt[:, None] * a * inv_sqrt[None, :]

    kind_feats: dict[NodeKind, Tensor] = {}
    kind_place: dict[NodeKind, Tensor] = {}
    for kind, rows in kind_rows.items():
        feats = np.stack([f for _, f in rows])
        place = np.zeros((n_rows, len(rows)))
        for col, (row, _) in enumerate(rows):
            place[row, col] = 1.0
        kind_feats[kind] = ad.constant(feats)
        kind_place[kind] = ad.constant(place)

    masks = {
        "dfs": _nll_masks([dfs for _, dfs, _ in items], bins),
        "os": _nll_masks([osl for _, _, osl in items], bins),
    }
    return _BatchConstants(n_patients=n_patients, n_rows=n_rows,
                           pool=ad.constant(pool), mixer=ad.constant(mixer),
                           attr_mean=attr_mean if attr_mean is None else ad.constant(attr_mean),
                           kind_feats=kind_feats, kind_place=kind_place, masks=masks)


def _batched_embed(model: FullModel, batch: _BatchConstants) -> Tensor:
    h0 = None
    for kind in NodeKind:
        if kind not in batch.kind_feats:
            continue
        if kind not in model.embedding.weights:
            raise KeyError(f"no embedding projection for present node kind {kind.value}")
        rows = ad.add(ad.matmul(batch.kind_feats[kind], model.embedding.weights[kind]),
                      model.embedding.biases[kind])
        placed = ad.matmul(batch.kind_place[kind], rows)
        h0 = placed if h0 is None else ad.add(h0, placed)
    return h0


def _batched_snapshots(model: FullModel, batch: _BatchConstants) -> list[Tensor]:
    cfg = model.config
    params = model.evolution
    h = _batched_embed(model, batch)
    if cfg.static_no_update:
        return [ad.matmul(batch.pool, h)]
    snapshots = []
    for t in range(cfg.horizon):
        sel = np.zeros((1, params.time_table.steps))
        sel[0, t] = 1.0
        e_t = ad.matmul(ad.constant(sel), params.time_table.table)
        x = ad.concat_cols(h, ad.broadcast_row(e_t, batch.n_rows))
        if params.backbone == "graphsage":
            agg = ad.concat_cols(ad.matmul(batch.mixer, x), batch.attr_mean)
            pre = ad.add(ad.add(ad.matmul(x, params.w_self), ad.matmul(agg, params.w_neigh)),
                         params.b_msg)
        else:
            pre = ad.add(ad.matmul(ad.matmul(batch.mixer, x), params.w_self), params.b_msg)
        delta = ad.add(ad.matmul(ad.relu(pre), params.w_out), params.b_out)
        h = ad.add(h, delta)
        if not np.isfinite(h.data).all():
            raise ad.NonFiniteError(f"node states diverged at evolution step {t}")
        snapshots.append(ad.matmul(batch.pool, h))
    return snapshots


def _batched_integrate(snapshots: list[Tensor], params: LstmParams, n: int) -> Tensor:
    h = ad.constant(np.zeros((n, params.hidden_dim)))
    c = ad.constant(np.zeros((n, params.hidden_dim)))
    hidden = []
    for z in snapshots:
        h, c = lstm_step(z, h, c, params)
        hidden.append(h)
    acc = hidden[0]
    for r in hidden[1:]:
        acc = ad.add(acc, r)
    return ad.mul(acc, ad.constant(np.full(acc.shape, 1.0 / len(hidden))))


def _mean_rows_list(rows: list[Tensor]) -> Tensor:
    acc = rows[0]
    for r in rows[1:]:
        acc = ad.add(acc, r)
    return ad.mul(acc, ad.constant(np.full(acc.shape, 1.0 / len(rows))))


def batched_mean_loss(model: FullModel, items: list[TrainItem], bins: TimeBins,
                      weights: LossWeights) -> Tensor:
    """Mean per-patient combined loss of the whole batch on one tape."""
    cfg = model.config
    batch = build_batch(items, cfg.backbone, bins)
    snapshots = _batched_snapshots(model, batch)
    if cfg.integrator == "lstm":
        h_star = _batched_integrate(snapshots, model.lstm, batch.n_patients)
    else:
        h_star = _mean_rows_list(snapshots)

    context = ad.tanh(ad.add(ad.matmul(h_star, model.heads.w_ctx), model.heads.b_ctx))
    dfs_logits = ad.add(ad.matmul(h_star, model.heads.w_dfs), model.heads.b_dfs)
    if not cfg.cascade:
        context = ad.constant(np.zeros((batch.n_patients, model.heads.context_dim)))
    os_logits = ad.add(ad.matmul(ad.concat_cols(h_star, context), model.heads.w_os),
                       model.heads.b_os)

    K = bins.count
    total = None
    for task, logits, weight in (("os", os_logits, weights.alpha),
                                 ("dfs", dfs_logits, weights.beta)):
        event_mask, surv_mask = batch.masks[task]
        h = clamp01(ad.sigmoid(logits))
        ll = ad.sum_all(ad.add(ad.mul(event_mask, ad.log(h)),
                               ad.mul(surv_mask, ad.log(ad.sub(
                                   ad.constant(np.ones((batch.n_patients, K))), h)))))
        term = ad.mul(ad.constant([[weight]]), ad.negate(ll))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, ad.constant([[1.0 / batch.n_patients]]))

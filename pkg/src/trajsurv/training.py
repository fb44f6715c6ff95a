"""Mini-batch training loop with plateau scheduling and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .batched import BATCHABLE_BACKBONES, batched_mean_loss
from .cohort import PatientRecord, augment, record_to_graph
from .graph import PatientGraph
from .heads import TimeBins
from .model import FullModel, restore_parameters, snapshot_parameters
from .objective import (AdamHyper, LossWeights, OptimizerState, SurvivalLabel,
                        adamw_step, batch_mean, combined_loss, discrete_nll, early_stop,
                        plateau_schedule)


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 1e-3
    batch_size: int = 64
    alpha: float = 1.0
    beta: float = 1.0
    max_epochs: int = 500
    patience: int = 20
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = False
    seed: int = 0


@dataclass
class TrainResult:
    best_val: float
    best_epoch: int
    epochs_run: int
    history: list[tuple[int, float, float, float]] = field(default_factory=list)


def patient_loss(model: FullModel, graph: PatientGraph, dfs: SurvivalLabel,
                 os_label: SurvivalLabel, bins: TimeBins, weights: LossWeights):
    out = model.forward(graph)
    dfs_nll = discrete_nll(out.dfs_hazards, dfs, bins)
    os_nll = discrete_nll(out.os_hazards, os_label, bins)
    return combined_loss(os_nll, dfs_nll, weights)


def _mean_loss(model: FullModel, items: list[tuple[PatientGraph, SurvivalLabel, SurvivalLabel]],
               bins: TimeBins, weights: LossWeights):
    # The stacked multi-patient tape computes the same mean loss with far
    # fewer nodes; gat has no stacked form and goes patient by patient.
    if model.config.backbone in BATCHABLE_BACKBONES:
        return batched_mean_loss(model, items, bins, weights)
    losses = [patient_loss(model, g, dfs, os_label, bins, weights)
              for g, dfs, os_label in items]
    return batch_mean(losses)


def train_model(model: FullModel, train_records: list[PatientRecord],
                val_records: list[PatientRecord], settings: TrainSettings,
                log_path=None) -> TrainResult:
    """Fit the model in place; the best-validation snapshot is restored.

    Validation is evaluated once per epoch on the combined loss; the plateau
    schedule and early stopping both watch it. With augmentation on, each
    training patient contributes its original graph plus four randomized
    variants, re-drawn every epoch from epoch-derived seeds.
    """
    if not train_records or not val_records:
        raise ValueError("need nonempty train and validation sets")
    bins = model.config.bins()
    weights = LossWeights(settings.alpha, settings.beta)
    hyper = AdamHyper(lr=settings.lr, beta1=settings.beta1, beta2=settings.beta2,
                      eps=settings.eps, weight_decay=settings.weight_decay)
    params = model.named_parameters()
    state = OptimizerState(lr=settings.lr)

    train_graphs = [record_to_graph(r) for r in train_records]
    val_items = [(record_to_graph(r), r.dfs, r.os) for r in val_records]
    rng = np.random.default_rng(np.random.SeedSequence([settings.seed, 1]))

    best = snapshot_parameters(model)
    best_val = np.inf
    best_epoch = 0
    result = TrainResult(best_val=np.inf, best_epoch=0, epochs_run=0)
    log_lines: list[str] = []

    for epoch in range(1, settings.max_epochs + 1):
        order = rng.permutation(len(train_records))
        epoch_items: list[tuple[PatientGraph, SurvivalLabel, SurvivalLabel]] = []
        for i in order:
            rec = train_records[i]
            if settings.augment:
                variant_seed = int(np.random.SeedSequence(
                    [settings.seed, 2, epoch, int(i)]).generate_state(1)[0])
                for g in augment(train_graphs[i], variant_seed):
                    epoch_items.append((g, rec.dfs, rec.os))
            else:
                epoch_items.append((train_graphs[i], rec.dfs, rec.os))

        train_losses = []
        for start in range(0, len(epoch_items), settings.batch_size):
            batch = epoch_items[start:start + settings.batch_size]
            loss = _mean_loss(model, batch, bins, weights)
            grads = ad.backward(loss, params=[p for _, p in params])
            adamw_step(params, grads, state, hyper)
            train_losses.append(loss.item())

        val_loss = _mean_loss(model, val_items, bins, weights).item()
        train_loss = float(np.mean(train_losses))
        log_lines.append(f"{epoch}\t{train_loss:.6f}\t{val_loss:.6f}\t{state.lr:.3e}")
        result.history.append((epoch, train_loss, val_loss, state.lr))

        if state.would_improve(val_loss):
            best = snapshot_parameters(model)
            best_val = val_loss
            best_epoch = epoch
        plateau_schedule(state, val_loss, settings.scheduler_factor,
                         settings.scheduler_patience)
        stop = early_stop(state, val_loss, settings.patience)
        result.epochs_run = epoch
        if stop:
            break

    restore_parameters(model, best)
    result.best_val = best_val
    result.best_epoch = best_epoch
    if log_path is not None:
        with open(log_path, "a") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return result

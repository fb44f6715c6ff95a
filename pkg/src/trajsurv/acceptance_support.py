"""Shared fixtures for the end-to-end gradient check (CLI and tests)."""

from __future__ import annotations

import numpy as np

from .autodiff import grad_check
from .cohort import Scenario, record_to_graph, simulate_cohort
from .model import ModelConfig, init_model
from .objective import LossWeights, batch_mean
from .training import patient_loss


def toy_setup(n_patients: int = 3, seed: int = 7, backbone: str = "graphsage"):
    """A tiny model and cohort: d=8, T=4, K=4 bins, 3 patients."""
    cfg = ModelConfig(backbone=backbone, hidden_dim=8, time_dim=4, summary_dim=8,
                      context_dim=4, horizon=4, num_bins=4, message_dim=8,
                      attention_dim=4)
    scenario = Scenario(region_len=4, clinical_len=3)
    records, _ = simulate_cohort(10, seed, scenario)
    records = records[:n_patients]
    graphs = [record_to_graph(r) for r in records]
    rng = np.random.default_rng(seed)
    widths = {k: 4 for k in graphs[0].order}
    from .graph import NodeKind
    widths[NodeKind.CLINICAL] = 3
    model = init_model(cfg, widths, rng)
    return model, records, graphs


def full_pipeline_gradcheck(step: float = 1e-5, backbone: str = "graphsage") -> float:
    """Max relative error of the tape gradient over the whole pipeline."""
    model, records, graphs = toy_setup(backbone=backbone)
    bins = model.config.bins()
    weights = LossWeights(1.0, 1.0)

    def loss():
        per_patient = [patient_loss(model, g, r.dfs, r.os, bins, weights)
                       for g, r in zip(graphs, records)]
        return batch_mean(per_patient)

    return grad_check(loss, dict(model.named_parameters()), step=step)

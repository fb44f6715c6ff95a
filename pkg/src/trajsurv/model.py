"""Full prognostic model: embedding -> evolution -> integrator -> heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .evolution import (EvolutionParams, TrajectorySnapshots, evolve, init_evolution,
                        static_snapshot)
from .graph import EmbeddingParams, NodeKind, PatientGraph, embed_nodes, init_embedding
from .heads import (HazardCurve, HeadParams, SurvivalCurve, TimeBins, annual_bins,
                    dfs_head, hazards_from_logits, init_heads, os_head,
                    survival_from_hazards)
from .trajectory import LstmParams, init_lstm, integrate, integrate_mean

INTEGRATORS = ("lstm", "mean")


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "graphsage"
    hidden_dim: int = 32          # d
    time_dim: int = 16            # d_t
    summary_dim: int = 32         # d_h
    context_dim: int = 16         # d_c
    horizon: int = 12             # T
    num_bins: int = 12            # K
    bin_edges: tuple[float, ...] | None = None
    message_dim: int = 32
    attention_dim: int = 16
    cascade: bool = True
    integrator: str = "lstm"
    static_no_update: bool = False

    def bins(self) -> TimeBins:
        if self.bin_edges is not None:
            return TimeBins(np.array(self.bin_edges))
        return annual_bins(self.num_bins)


@dataclass
class ForwardResult:
    snapshots: TrajectorySnapshots
    h_star: Tensor
    dfs_logits: Tensor
    dfs_context: Tensor
    os_logits: Tensor
    dfs_hazards: Tensor
    os_hazards: Tensor


@dataclass
class FullModel:
    config: ModelConfig
    embedding: EmbeddingParams
    evolution: EvolutionParams
    lstm: LstmParams
    heads: HeadParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return (self.embedding.named_leaves() + self.evolution.named_leaves()
                + self.lstm.named_leaves() + self.heads.named_leaves())

    def forward(self, graph: PatientGraph) -> ForwardResult:
        cfg = self.config
        h0 = embed_nodes(graph, self.embedding)
        if cfg.static_no_update:
            snapshots = static_snapshot(h0)
        else:
            snapshots = evolve(h0, graph, self.evolution, cfg.horizon)
        if cfg.integrator == "lstm":
            h_star = integrate(snapshots, self.lstm)
        else:
            h_star = integrate_mean(snapshots)
        dfs_logits, context = dfs_head(h_star, self.heads)
        os_logits = os_head(h_star, context, self.heads, cascade_enabled=cfg.cascade)
        return ForwardResult(
            snapshots=snapshots,
            h_star=h_star,
            dfs_logits=dfs_logits,
            dfs_context=context,
            os_logits=os_logits,
            dfs_hazards=ad.sigmoid(dfs_logits),
            os_hazards=ad.sigmoid(os_logits),
        )

    def predict_curves(self, graph: PatientGraph
                       ) -> dict[str, tuple[HazardCurve, SurvivalCurve]]:
        """Hazard and survival curves per task (monotonicity asserted)."""
        out = self.forward(graph)
        result = {}
        for task, logits in (("dfs", out.dfs_logits), ("os", out.os_logits)):
            hc = hazards_from_logits(logits)
            result[task] = (hc, survival_from_hazards(hc))
        return result


def init_model(config: ModelConfig, feature_widths: dict[NodeKind, int],
               rng: np.random.Generator) -> FullModel:
    """Build a model with freshly initialized parameters.

    The integrator determines the summary width the heads see: the LSTM maps
    snapshots to summary_dim, while the mean integrator keeps the snapshot
    width (hidden_dim).
    """
    if config.integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {config.integrator!r}")
    embedding = init_embedding(feature_widths, config.hidden_dim, rng)
    evolution = init_evolution(config.backbone, config.hidden_dim, config.time_dim,
                               max(config.horizon, 1), config.message_dim, rng,
                               attention_dim=config.attention_dim)
    lstm = init_lstm(config.hidden_dim, config.summary_dim, rng)
    head_input = config.summary_dim if config.integrator == "lstm" else config.hidden_dim
    heads = init_heads(head_input, config.context_dim, config.num_bins, rng)
    return FullModel(config=config, embedding=embedding, evolution=evolution,
                     lstm=lstm, heads=heads)


def snapshot_parameters(model: FullModel) -> dict[str, np.ndarray]:
    return {name: leaf.data.copy() for name, leaf in model.named_parameters()}


def restore_parameters(model: FullModel, snapshot: dict[str, np.ndarray]) -> None:
    for name, leaf in model.named_parameters():
        leaf.data[:] = snapshot[name]


def save_model(model: FullModel, path) -> None:
    """Persist weights and the architecture needed to rebuild them."""
    import json

    cfg = model.config
    arrays = {name: leaf.data for name, leaf in model.named_parameters()}
    meta = {
        "backbone": cfg.backbone, "hidden_dim": cfg.hidden_dim, "time_dim": cfg.time_dim,
        "summary_dim": cfg.summary_dim, "context_dim": cfg.context_dim,
        "horizon": cfg.horizon, "num_bins": cfg.num_bins,
        "bin_edges": list(cfg.bin_edges) if cfg.bin_edges is not None else None,
        "message_dim": cfg.message_dim, "attention_dim": cfg.attention_dim,
        "cascade": cfg.cascade, "integrator": cfg.integrator,
        "static_no_update": cfg.static_no_update,
        "feature_widths": {k.value: int(w.rows)
                           for k, w in model.embedding.weights.items()},
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_model(path) -> FullModel:
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    cfg = ModelConfig(
        backbone=meta["backbone"], hidden_dim=meta["hidden_dim"], time_dim=meta["time_dim"],
        summary_dim=meta["summary_dim"], context_dim=meta["context_dim"],
        horizon=meta["horizon"], num_bins=meta["num_bins"],
        bin_edges=tuple(meta["bin_edges"]) if meta["bin_edges"] is not None else None,
        message_dim=meta["message_dim"], attention_dim=meta["attention_dim"],
        cascade=meta["cascade"], integrator=meta["integrator"],
        static_no_update=meta["static_no_update"],
    )
    widths = {NodeKind(k): v for k, v in meta["feature_widths"].items()}
    model = init_model(cfg, widths, np.random.default_rng(0))
    for name, leaf in model.named_parameters():
        leaf.data[:] = arrays[name]
    return model

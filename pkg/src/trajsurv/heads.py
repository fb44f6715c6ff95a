"""Cascaded discrete-time survival heads and hazard/survival transforms.

The recurrence branch projects the trajectory summary to logits over K time
bins and to a compact context vector; the mortality branch consumes the
summary concatenated with that context, encoding that recurrence informs
mortality. Per-bin sigmoid hazards multiply into survival curves, and a
point event-time estimate is the expectation with tail mass at the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .evolution import uniform_weight


@dataclass(frozen=True)
class TimeBins:
    """K left-closed bins [edges[k], edges[k+1]) in years; edges[0] = 0."""

    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "edges", e)
        if e.shape[0] < 2 or e[0] != 0.0 or not (np.diff(e) > 0).all():
            raise ValueError("bin edges must start at 0 and increase strictly")

    @property
    def count(self) -> int:
        return self.edges.shape[0] - 1

    @property
    def horizon(self) -> float:
        return float(self.edges[-1])

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def annual_bins(count: int = 12) -> TimeBins:
    return TimeBins(np.arange(count + 1, dtype=np.float64))


@dataclass
class HeadParams:
    """Context projection (d_h -> d_c), recurrence logits (d_h -> K), and the
    mortality logit layer on the concatenation (d_h + d_c -> K)."""

    w_ctx: Tensor
    b_ctx: Tensor
    w_dfs: Tensor
    b_dfs: Tensor
    w_os: Tensor
    b_os: Tensor

    @property
    def context_dim(self) -> int:
        return self.w_ctx.cols

    @property
    def num_bins(self) -> int:
        return self.w_dfs.cols

    def named_leaves(self) -> list[tuple[str, Tensor]]:
        return [("heads.w_ctx", self.w_ctx), ("heads.b_ctx", self.b_ctx),
                ("heads.w_dfs", self.w_dfs), ("heads.b_dfs", self.b_dfs),
                ("heads.w_os", self.w_os), ("heads.b_os", self.b_os)]


def init_heads(summary_dim: int, context_dim: int, num_bins: int,
               rng: np.random.Generator) -> HeadParams:
    def b(width, name):
        return ad.parameter(np.zeros((1, width)), name=name)

    return HeadParams(
        w_ctx=uniform_weight(rng, summary_dim, context_dim, "heads.w_ctx"),
        b_ctx=b(context_dim, "heads.b_ctx"),
        w_dfs=uniform_weight(rng, summary_dim, num_bins, "heads.w_dfs"),
        b_dfs=b(num_bins, "heads.b_dfs"),
        w_os=uniform_weight(rng, summary_dim + context_dim, num_bins, "heads.w_os"),
        b_os=b(num_bins, "heads.b_os"),
    )


def dfs_head(h_star: Tensor, params: HeadParams) -> tuple[Tensor, Tensor]:
    """Recurrence logits (1 x K) and the tanh-bounded context vector (1 x d_c)."""
    context = ad.tanh(ad.add(ad.matmul(h_star, params.w_ctx), params.b_ctx))
    logits = ad.add(ad.matmul(h_star, params.w_dfs), params.b_dfs)
    return logits, context


def os_head(h_star: Tensor, dfs_context: Tensor, params: HeadParams,
            cascade_enabled: bool = True) -> Tensor:
    """Mortality logits; with the cascade disabled the context is replaced by
    a zero constant, so no gradient reaches the context projection."""
    if not cascade_enabled:
        dfs_context = ad.constant(np.zeros((1, params.context_dim)))
    joint = ad.concat_cols(h_star, dfs_context)
    return ad.add(ad.matmul(joint, params.w_os), params.b_os)


@dataclass(frozen=True)
class HazardCurve:
    """Per-bin conditional event probabilities, each in (0, 1)."""

    h: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.h, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "h", v)
        if v.size == 0 or not np.isfinite(v).all() or (v <= 0).any() or (v >= 1).any():
            raise ValueError("hazards must be finite and strictly inside (0, 1)")


@dataclass(frozen=True)
class SurvivalCurve:
    """S(k) = probability of surviving beyond bin k; positive, nonincreasing."""

    s: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.s, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "s", v)
        if v.size == 0 or not np.isfinite(v).all():
            raise ValueError("survival values must be finite")
        if v[0] > 1.0 or v[-1] <= 0.0 or (np.diff(v) > 0).any():
            raise ValueError("survival curve must be nonincreasing within (0, 1]")

    def at_time(self, t: float, bins: TimeBins) -> float:
        """Step interpolation: the value of the bin containing t."""
        from .objective import label_to_bin
        return float(self.s[label_to_bin(t, bins)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def hazards_from_logits(logits: np.ndarray | Tensor) -> HazardCurve:
    if isinstance(logits, Tensor):
        logits = logits.data
    x = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not np.isfinite(x).all():
        raise ValueError("logits must be finite")
    # Clamp keeps the open-interval invariant at extreme logits.
    h = np.clip(_sigmoid(x), 1e-300, 1.0 - 1e-16)
    return HazardCurve(h)


def survival_from_hazards(hc: HazardCurve) -> SurvivalCurve:
    return SurvivalCurve(np.cumprod(1.0 - hc.h))


def point_estimate_time(curve: SurvivalCurve, bins: TimeBins) -> float:
    """Expected event time with the tail mass placed at the final edge."""
    s = curve.s
    if s.shape[0] != bins.count:
        raise ValueError(f"curve has {s.shape[0]} bins, grid has {bins.count}")
    prev = np.concatenate(([1.0], s[:-1]))
    mass = prev - s
    return float(mass @ bins.midpoints() + s[-1] * bins.edges[-1])

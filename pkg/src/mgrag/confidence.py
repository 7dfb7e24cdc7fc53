"""Uncertainty quantities, the joint training objective, and path gating.

Entropy measures how spread a predictive distribution is; variance measures
how much it moves under small seeded perturbations of the fused context. The
joint objective adds both to the generation loss with fixed coefficients.
Gating removes retrieval paths whose confidence falls below a threshold and
recomputes the context over the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .router import FusedContext, assemble, copy_with_bypass

VAR_MODES = ("ensemble", "intra")


def validate_distribution(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"distribution must be a non-empty 1-d array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("distribution has non-finite entries")
    if np.any(p < -tol):
        raise ValueError(f"distribution has negative entries (min {p.min()})")
    total = float(p.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"distribution sums to {total}, not 1")
    return p


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0."""
    p = validate_distribution(p)
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def ensemble_variance(samples: np.ndarray) -> float:
    """Mean per-class population variance across K sampled distributions.

    samples has shape (K, V); variance uses divisor K.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"samples must be (K, V), got shape {samples.shape}")
    if samples.shape[0] < 2:
        raise ConfigError(f"ensemble needs K >= 2 samples, got {samples.shape[0]}")
    return float(np.mean(np.var(samples, axis=0)))


def intra_variance(p: np.ndarray) -> float:
    """Spread of a single distribution's entries around uniform: (1/V) sum (p_i - 1/V)^2."""
    p = validate_distribution(p)
    v = p.size
    return float(np.mean((p - 1.0 / v) ** 2))


@dataclass(frozen=True)
class GateConfig:
    tau_path: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    ensemble_K: int = 8
    noise_sigma: float = 0.05
    seed: int = 0
    var_mode: str = "ensemble"

    def __post_init__(self):
        if not 0.0 <= self.tau_path <= 1.0:
            raise ConfigError(f"tau_path must be in [0, 1], got {self.tau_path}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if self.ensemble_K < 2:
            raise ConfigError(f"ensemble_K must be >= 2, got {self.ensemble_K}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.var_mode not in VAR_MODES:
            raise ConfigError(f"var_mode must be one of {VAR_MODES}, got {self.var_mode!r}")

    def to_dict(self) -> dict:
        return {
            "tau_path": self.tau_path,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "ensemble_K": self.ensemble_K,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "var_mode": self.var_mode,
        }


@dataclass(frozen=True)
class ConfidenceReport:
    entropy: float
    variance: float
    l_gen: float
    total: float
    kept_paths: int
    dropped_paths: int
    gate_bypassed: bool = False

    def to_dict(self) -> dict:
        return {
            "entropy": self.entropy,
            "variance": self.variance,
            "l_gen": self.l_gen,
            "total": self.total,
            "kept_paths": self.kept_paths,
            "dropped_paths": self.dropped_paths,
            "gate_bypassed": self.gate_bypassed,
        }


def combined_objective(l_gen: float, h: float, var: float, cfg: GateConfig) -> float:
    """l_gen + lambda1 * h + lambda2 * var."""
    for name, value in (("l_gen", l_gen), ("entropy", h), ("variance", var)):
        if not np.isfinite(value):
            raise ValueError(f"{name} is not finite: {value}")
    return float(l_gen + cfg.lambda1 * h + cfg.lambda2 * var)


def filter_paths(ctx: FusedContext, tau_path: float) -> FusedContext:
    """Drop paths with confidence below tau and recompute the context.

    tau = 0 is a no-op that returns the input object. If every path would be
    dropped, gating is skipped and the context comes back flagged as bypassed
    rather than empty.
    """
    if not 0.0 <= tau_path <= 1.0:
        raise ConfigError(f"tau_path must be in [0, 1], got {tau_path}")
    if tau_path == 0.0:
        return ctx
    survivors = {(p.layer, p.unit_id) for p in ctx.paths if p.path_confidence >= tau_path}
    if not survivors:
        return copy_with_bypass(ctx)
    if len(survivors) == len(ctx.paths):
        return ctx
    kept_hits = {}
    kept_vectors = {}
    for layer_no, hits in ctx.layer_hits.items():
        keep = [i for i, h in enumerate(hits) if (layer_no, h.unit_id) in survivors]
        if keep:
            kept_hits[layer_no] = [hits[i] for i in keep]
            kept_vectors[layer_no] = ctx.hit_vectors[layer_no][keep]
    return assemble(kept_hits, kept_vectors, ctx.depth, ctx.c.shape[0], ctx.config)

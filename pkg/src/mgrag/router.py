"""Cross-layer routing, per-layer readouts, and context fusion.

A query is encoded once per layer, searched against each layer's memory, and
the layers are weighted by a temperature softmax over their evidence scores.
The fused context is the weight-sum of per-layer readouts, where a readout is
the similarity-softmax-weighted mean of that layer's retrieved unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .embedder import embed
from .errors import ConfigError, RoutingError
from .memory import Hit, LayerMemory, MemoryHierarchy, search_layer

SCORE_MODES = ("mean_topk", "max")


@dataclass(frozen=True)
class RouterConfig:
    k_per_layer: int = 5
    temperature: float = 1.0
    layer_score_mode: str = "mean_topk"

    def __post_init__(self):
        if self.k_per_layer < 1:
            raise ConfigError(f"k_per_layer must be >= 1, got {self.k_per_layer}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.layer_score_mode not in SCORE_MODES:
            raise ConfigError(
                f"layer_score_mode must be one of {SCORE_MODES}, got {self.layer_score_mode!r}"
            )

    def to_dict(self) -> dict:
        return {
            "k_per_layer": self.k_per_layer,
            "temperature": self.temperature,
            "layer_score_mode": self.layer_score_mode,
        }


@dataclass(frozen=True)
class RetrievalPath:
    """One (layer, unit) evidence route with its confidence."""

    layer: int
    unit_id: str
    doc_id: int
    sim: float
    within_layer_weight: float
    path_confidence: float


@dataclass
class FusedContext:
    c: np.ndarray  # (dim,) weighted sum of layer readouts, not re-normalized
    paths: list[RetrievalPath]
    weights: np.ndarray  # (depth,) routing weights, zeros for empty layers
    scores: np.ndarray  # (depth,) layer scores, -inf sentinel for empty layers
    layer_hits: dict[int, list[Hit]]
    hit_vectors: dict[int, np.ndarray]  # layer -> (n_hits, dim), aligned with layer_hits
    config: RouterConfig
    gate_bypassed: bool = field(default=False)

    @property
    def depth(self) -> int:
        return len(self.weights)


def layer_scores(
    hier: MemoryHierarchy, query_encodings: np.ndarray, cfg: RouterConfig
) -> tuple[np.ndarray, dict[int, list[Hit]]]:
    """Search every layer and reduce each hit list to one scalar score.

    Layers with no hits score -inf so they drop to weight zero after softmax.
    """
    query_encodings = np.asarray(query_encodings, dtype=np.float64)
    if query_encodings.shape[0] != hier.depth:
        raise ValueError(
            f"expected {hier.depth} query encodings, got {query_encodings.shape[0]}"
        )
    scores = np.full(hier.depth, -np.inf)
    hits_by_layer: dict[int, list[Hit]] = {}
    for layer_no in range(1, hier.depth + 1):
        hits = search_layer(hier.layer(layer_no), query_encodings[layer_no - 1], cfg.k_per_layer)
        hits_by_layer[layer_no] = hits
        if not hits:
            continue
        sims = np.array([h.sim for h in hits])
        scores[layer_no - 1] = float(np.max(sims) if cfg.layer_score_mode == "max" else np.mean(sims))
    if not np.any(np.isfinite(scores)):
        raise RoutingError("no layer produced any hits")
    return scores, hits_by_layer


def routing_weights(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax over layer scores; -inf scores map to weight 0."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    scores = np.asarray(scores, dtype=np.float64)
    finite = np.isfinite(scores)
    if not finite.any():
        raise RoutingError("all layer scores are -inf")
    shifted = (scores - scores[finite].max()) / temperature
    exps = np.exp(shifted)  # exp(-inf) -> 0 handles the sentinels
    return exps / exps.sum()


def _within_weights(sims: np.ndarray) -> np.ndarray:
    # softmax at temperature 1 over one layer's hit similarities
    shifted = sims - sims.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def readout(hits: list[Hit], mem: LayerMemory) -> np.ndarray:
    """Similarity-softmax-weighted mean of the hits' stored vectors.

    Not re-normalized; the fusion weights carry the scale. Empty hits give a
    zero vector.
    """
    if not hits:
        return np.zeros(mem.vectors.shape[1])
    sims = np.array([h.sim for h in hits])
    rows = mem.vectors[[h.row for h in hits]]
    return _within_weights(sims) @ rows


def fuse(
    weights: np.ndarray,
    readouts: np.ndarray,
    paths: list[RetrievalPath] | None = None,
    scores: np.ndarray | None = None,
    layer_hits: dict[int, list[Hit]] | None = None,
    hit_vectors: dict[int, np.ndarray] | None = None,
    config: RouterConfig | None = None,
) -> FusedContext:
    """Exact weighted sum of per-layer readouts."""
    weights = np.asarray(weights, dtype=np.float64)
    readouts = np.asarray(readouts, dtype=np.float64)
    if readouts.ndim != 2 or readouts.shape[0] != weights.shape[0]:
        raise ValueError(
            f"need one readout per layer: weights {weights.shape}, readouts {readouts.shape}"
        )
    c = weights @ readouts
    if not np.all(np.isfinite(c)):
        raise ValueError("fused context has non-finite components")
    depth = len(weights)
    return FusedContext(
        c=c,
        paths=list(paths) if paths is not None else [],
        weights=weights,
        scores=np.asarray(scores, dtype=np.float64) if scores is not None else np.full(depth, np.nan),
        layer_hits=layer_hits if layer_hits is not None else {},
        hit_vectors=hit_vectors if hit_vectors is not None else {},
        config=config if config is not None else RouterConfig(),
    )


def assemble(
    layer_hits: dict[int, list[Hit]],
    hit_vectors: dict[int, np.ndarray],
    depth: int,
    dim: int,
    cfg: RouterConfig,
) -> FusedContext:
    """Build the full fused context from per-layer hits and their vectors.

    Shared by routing and by confidence gating, so a gated context is
    recomputed through exactly the same formulas as the original.
    """
    scores = np.full(depth, -np.inf)
    for layer_no in range(1, depth + 1):
        hits = layer_hits.get(layer_no, [])
        if not hits:
            continue
        sims = np.array([h.sim for h in hits])
        scores[layer_no - 1] = float(np.max(sims) if cfg.layer_score_mode == "max" else np.mean(sims))
    if not np.any(np.isfinite(scores)):
        raise RoutingError("no layer produced any hits")
    weights = routing_weights(scores, cfg.temperature)
    readouts = np.zeros((depth, dim))
    paths: list[RetrievalPath] = []
    for layer_no in range(1, depth + 1):
        hits = layer_hits.get(layer_no, [])
        if not hits:
            continue
        sims = np.array([h.sim for h in hits])
        within = _within_weights(sims)
        readouts[layer_no - 1] = within @ hit_vectors[layer_no]
        for hit, w in zip(hits, within):
            paths.append(
                RetrievalPath(
                    layer=layer_no,
                    unit_id=hit.unit_id,
                    doc_id=hit.doc_id,
                    sim=hit.sim,
                    within_layer_weight=float(w),
                    path_confidence=float(weights[layer_no - 1] * w),
                )
            )
    paths.sort(key=lambda p: (-p.path_confidence, p.layer, p.unit_id))
    return fuse(
        weights,
        readouts,
        paths=paths,
        scores=scores,
        layer_hits=layer_hits,
        hit_vectors=hit_vectors,
        config=cfg,
    )


def route(hier: MemoryHierarchy, query_text: str, cfg: RouterConfig = RouterConfig()) -> FusedContext:
    """Encode a query per layer, search, weight, and fuse into one context."""
    encodings = np.stack(
        [embed(query_text, layer_no, hier.embedder_spec) for layer_no in range(1, hier.depth + 1)]
    )
    _, hits_by_layer = layer_scores(hier, encodings, cfg)
    hit_vectors = {
        layer_no: hier.layer(layer_no).vectors[[h.row for h in hits]]
        for layer_no, hits in hits_by_layer.items()
        if hits
    }
    return assemble(hits_by_layer, hit_vectors, hier.depth, hier.dim, cfg)


def copy_with_bypass(ctx: FusedContext) -> FusedContext:
    return replace(ctx, gate_bypassed=True)

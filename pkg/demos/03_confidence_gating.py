"""Drop weak retrieval paths and watch the context renormalize.

A path's confidence is its layer weight times its within-layer weight, so it
lives in [0, 1] and sums to 1 over all paths. Gating removes paths below a
threshold and recomputes the fusion from the survivors; if a threshold would
remove everything, the gate steps aside and flags itself instead.

    python3 demos/03_confidence_gating.py
"""

from pathlib import Path

import numpy as np

from mgrag.confidence import filter_paths
from mgrag.corpus import read_cisi_documents
from mgrag.embedder import EmbedderSpec
from mgrag.memory import build
from mgrag.router import RouterConfig, route

DATA = Path(__file__).resolve().parent.parent / "data"
QUERY = "automatic indexing of scientific journal articles"


def main() -> None:
    docs = read_cisi_documents(DATA / "cisi_sample.all")
    hier = build(docs, EmbedderSpec(dim=128), depth=3)
    ctx = route(hier, QUERY, RouterConfig(k_per_layer=4))

    print(f"query: {QUERY!r}")
    print(f"{len(ctx.paths)} paths, total confidence "
          f"{sum(p.path_confidence for p in ctx.paths):.6f}")
    for path in ctx.paths:
        print(f"  layer {path.layer}  doc {path.doc_id:>3}  "
              f"confidence {path.path_confidence:.4f}")

    for tau in (0.0, 0.05, 0.10, 0.25, 1.0):
        gated = filter_paths(ctx, tau)
        if gated is ctx:
            note = "no-op, same context object back"
        elif gated.gate_bypassed:
            note = "would drop everything: bypassed, context unchanged"
        else:
            dropped = len(ctx.paths) - len(gated.paths)
            note = (f"kept {len(gated.paths)}, dropped {dropped}, "
                    f"weights {np.round(gated.weights, 3).tolist()}")
        print(f"tau={tau:<5} {note}")

    print("\nafter gating, surviving paths are re-weighted through the same "
          "softmax formulas,\nso confidences always sum back to 1:")
    gated = filter_paths(ctx, 0.05)
    if not gated.gate_bypassed:
        print(f"  sum of path confidences at tau=0.05: "
              f"{sum(p.path_confidence for p in gated.paths):.12f}")


if __name__ == "__main__":
    main()

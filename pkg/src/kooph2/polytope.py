"""Polytopic model sets built from entrywise spreads of fitted predictors.

The data-driven models fitted from different datasets differ entry by
entry.  The polytope construction freezes every entry at its mean across
models except the ``h`` entries with the largest max-min spread; those
entries take their max/min values at the vertices, giving 2^h vertex
systems whose convex hull covers the fitted family on the varied entries.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .edmd import LinearPredictor, _mat_from_json, _mat_to_json

__all__ = [
    "PolytopeModel",
    "entry_stats",
    "build_polytope",
    "convex_combine",
    "spread_table",
    "save_polytope",
    "load_polytope",
]

BLOCKS = ("A", "B", "B_w")


def _block(model: LinearPredictor, name):
    return getattr(model, name)


def _check_uniform(models):
    if not models:
        raise ValueError("need at least one model")
    shapes = [(m.A.shape, m.B.shape, m.B_w.shape) for m in models]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ValueError("models must have uniform dimensions")


def entry_stats(models):
    """Entrywise (max, min, mean) across models for each matrix block."""
    _check_uniform(models)
    stats = {}
    for name in BLOCKS:
        stacked = np.stack([_block(m, name) for m in models])
        stats[name] = (
            stacked.max(axis=0),
            stacked.min(axis=0),
            stacked.mean(axis=0),
        )
    return stats


@dataclass
class PolytopeModel:
    """2^h vertex triples (A_i, B_i, Bw_i) plus the varied-entry index set."""

    vertices: list  # list of (A, B, B_w) triples
    varied_entries: list  # ordered list of (block, row, col)
    stats: dict  # block -> (max, min, mean)
    h: int
    source_ids: list = field(default_factory=list)

    @property
    def num_vertices(self):
        return len(self.vertices)

    def vertex_predictors(self):
        return [
            LinearPredictor(A=A, B=B, B_w=Bw, provenance={"vertex": i})
            for i, (A, B, Bw) in enumerate(self.vertices)
        ]


def spread_table(models, blocks=("A",)):
    """Sorted per-entry spread report: [(block, row, col, spread), ...].

    Sorting is by decreasing spread with ties broken in row-major order,
    first selected block first, so the ranking is deterministic.  This is
    also the diagnostics emitted when a poor dictionary blows the
    polytope up: inspect the leading spreads.
    """
    stats = entry_stats(models)
    rows = []
    for b, name in enumerate(blocks):
        if name not in BLOCKS:
            raise ValueError(f"unknown block '{name}'")
        mx, mn, _ = stats[name]
        spread = mx - mn
        for (i, j), s in np.ndenumerate(spread):
            rows.append((name, i, j, float(s), b))
    rows.sort(key=lambda r: (-r[3], r[4], r[1], r[2]))
    return [(name, i, j, s) for name, i, j, s, _ in rows]


def build_polytope(models, h, blocks=("A",)) -> PolytopeModel:
    """Threshold construction of the 2^h-vertex polytope set.

    All entries start at their mean.  For p = 1..h the entry with the
    p-th largest spread (within the selected blocks) is located, the
    vertex list is doubled, and the entry is set to its max on the first
    copies and its min on the appended copies.  Blocks not listed in
    ``blocks`` stay frozen at their mean in every vertex.
    """
    _check_uniform(models)
    h = int(h)
    stats = entry_stats(models)
    table = spread_table(models, blocks=blocks)
    if h < 0 or h > len(table):
        raise ValueError(
            f"h={h} outside the {len(table)} entries available in blocks {blocks}"
        )
    mean = {name: stats[name][2] for name in BLOCKS}
    vertices = [{name: mean[name].copy() for name in BLOCKS}]
    varied = []
    for p in range(h):
        name, s, t, _ = table[p]
        varied.append((name, int(s), int(t)))
        hi = stats[name][0][s, t]
        lo = stats[name][1][s, t]
        doubled = []
        for v in vertices:
            w = {k: m.copy() for k, m in v.items()}
            v[name][s, t] = hi
            w[name][s, t] = lo
            doubled.append(w)
        vertices.extend(doubled)
    triples = [(v["A"], v["B"], v["B_w"]) for v in vertices]
    return PolytopeModel(
        vertices=triples,
        varied_entries=varied,
        stats=stats,
        h=h,
        source_ids=[m.provenance.get("dataset_id", "") for m in models],
    )


def convex_combine(alphas, vertices) -> LinearPredictor:
    """Entrywise convex combination of vertex triples.

    ``vertices`` is a PolytopeModel or a list of (A, B, B_w) triples.
    Weights must be nonnegative and sum to one within 1e-12.
    """
    if isinstance(vertices, PolytopeModel):
        vertices = vertices.vertices
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or a.size != len(vertices):
        raise ValueError("need one weight per vertex")
    if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    A = sum(ai * v[0] for ai, v in zip(a, vertices))
    B = sum(ai * v[1] for ai, v in zip(a, vertices))
    Bw = sum(ai * v[2] for ai, v in zip(a, vertices))
    return LinearPredictor(A=A, B=B, B_w=Bw, provenance={"combination": a.tolist()})


def polytope_to_dict(poly: PolytopeModel):
    return {
        "kind": "polytope_model",
        "h": poly.h,
        "varied_entries": [[name, int(i), int(j)] for name, i, j in poly.varied_entries],
        "vertices": [
            {"A": _mat_to_json(A), "B": _mat_to_json(B), "B_w": _mat_to_json(Bw)}
            for A, B, Bw in poly.vertices
        ],
        "stats": {
            name: {
                "max": _mat_to_json(mx),
                "min": _mat_to_json(mn),
                "mean": _mat_to_json(me),
            }
            for name, (mx, mn, me) in poly.stats.items()
        },
        "source_ids": list(poly.source_ids),
    }


def polytope_from_dict(d):
    if d.get("kind") != "polytope_model":
        raise ValueError("not a polytope record")
    return PolytopeModel(
        vertices=[
            (_mat_from_json(v["A"]), _mat_from_json(v["B"]), _mat_from_json(v["B_w"]))
            for v in d["vertices"]
        ],
        varied_entries=[(name, int(i), int(j)) for name, i, j in d["varied_entries"]],
        stats={
            name: (
                _mat_from_json(s["max"]),
                _mat_from_json(s["min"]),
                _mat_from_json(s["mean"]),
            )
            for name, s in d["stats"].items()
        },
        h=int(d["h"]),
        source_ids=list(d.get("source_ids", [])),
    )


def save_polytope(poly: PolytopeModel, path):
    with open(path, "w") as f:
        json.dump(polytope_to_dict(poly), f, indent=1)


def load_polytope(path) -> PolytopeModel:
    with open(path) as f:
        return polytope_from_dict(json.load(f))

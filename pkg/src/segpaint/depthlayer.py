"""Occluder/occludee inference from masks and the depth-layering metric.

An object q occludes object p when the IoU between q's visible mask and
p's hidden mask clears a threshold (default 5%). Directed pairs aggregate
into a per-image graph; accuracy is the per-image fraction of ground-truth
pairs recovered with the correct direction, averaged over images. A
layering view of the graph is available for presentation: cycles (possible
with noisy predictions) are broken by dropping the weakest edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .maskops import binarize, iou
from .scenegen import Sample

DEFAULT_THRESHOLD = 0.05


@dataclass(frozen=True)
class OcclusionPair:
    occluder: Hashable
    occludee: Hashable
    score: float


@dataclass
class OcclusionGraph:
    """Directed occluder -> occludee edges for one image."""

    nodes: tuple[Hashable, ...]
    pairs: list[OcclusionPair] = field(default_factory=list)

    def edges(self) -> set[tuple[Hashable, Hashable]]:
        return {(p.occluder, p.occludee) for p in self.pairs}

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "pairs": [
                {"occluder": p.occluder, "occludee": p.occludee, "score": p.score}
                for p in self.pairs
            ],
        }


def infer_occlusions(
    objects: Sequence[tuple[np.ndarray, np.ndarray]],
    threshold: float = DEFAULT_THRESHOLD,
    ids: Sequence[Hashable] | None = None,
) -> OcclusionGraph:
    """Build the occlusion graph from per-object (visible, predicted-full) masks.

    All masks must share one image frame. Each object's predicted hidden
    region is its predicted full mask minus its own visible mask; an edge
    q -> p is emitted when IoU(visible_q, hidden_p) >= threshold.
    """
    if ids is None:
        ids = list(range(len(objects)))
    if len(ids) != len(objects):
        raise ValueError(f"{len(ids)} ids for {len(objects)} objects")
    if objects:
        frame = objects[0][0].shape
        for sv, sf in objects:
            if sv.shape != frame or sf.shape != frame:
                raise ValueError(
                    f"mask frame mismatch: expected {frame}, got {sv.shape}/{sf.shape}"
                )
    svs = [binarize(sv) for sv, _ in objects]
    hidden = [binarize(sf) * (1.0 - svs[i]) for i, (_, sf) in enumerate(objects)]
    graph = OcclusionGraph(nodes=tuple(ids))
    for qi, q in enumerate(ids):
        for pi, p in enumerate(ids):
            if qi == pi:
                continue
            if not np.any(hidden[pi] >= 0.5):
                continue
            score = iou(svs[qi], hidden[pi])
            if score >= threshold:
                graph.pairs.append(OcclusionPair(q, p, score))
    return graph


def gt_pairs(samples: Sequence[Sample], threshold: float = DEFAULT_THRESHOLD,
             ids: Sequence[Hashable] | None = None) -> set[tuple[Hashable, Hashable]]:
    """Ground-truth occlusion pairs of one scene from exact (sv, si) masks.

    Geometry guarantees the direction: a hidden pixel of p can only lie
    under the visible mask of an object in front of p.
    """
    if ids is None:
        ids = [s.object_id for s in samples]
    out = set()
    for qi, q in enumerate(samples):
        for pi, p in enumerate(samples):
            if qi == pi or not np.any(p.si >= 0.5):
                continue
            if iou(q.sv, p.si) >= threshold:
                out.add((ids[qi], ids[pi]))
    return out


def depth_accuracy(
    pred: dict[Hashable, OcclusionGraph],
    gt: dict[Hashable, set[tuple[Hashable, Hashable]]],
) -> float:
    """Mean over images of the fraction of GT pairs predicted with correct direction.

    Images without GT pairs carry no signal and are skipped; a missing or
    reversed edge counts as incorrect. Every GT image must have a predicted
    graph.
    """
    missing = set(gt) - set(pred)
    if missing:
        raise ValueError(f"no predictions for images: {sorted(map(str, missing))}")
    ratios = []
    for key, pairs in gt.items():
        if not pairs:
            continue
        edges = pred[key].edges()
        ratios.append(len(pairs & edges) / len(pairs))
    if not ratios:
        return 1.0
    return float(np.mean(ratios))


@dataclass
class LayerResult:
    """Topological layering of the (acyclicized) graph, front layer first."""

    layers: list[list[Hashable]]
    removed: list[OcclusionPair]


def _find_cycle(nodes, adj) -> list[tuple[Hashable, Hashable]] | None:
    """Return one cycle as an edge list, or None if the graph is acyclic."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {v: WHITE for v in nodes}
    stack_edges: list[tuple[Hashable, Hashable]] = []

    def visit(u):
        color[u] = GRAY
        for v in adj[u]:
            if color[v] == GRAY:
                cycle = [(u, v)]
                for e in reversed(stack_edges):
                    cycle.append(e)
                    if e[0] == v:
                        break
                cycle.reverse()
                return cycle
            if color[v] == WHITE:
                stack_edges.append((u, v))
                found = visit(v)
                stack_edges.pop()
                if found:
                    return found
        color[u] = BLACK
        return None

    for start in nodes:
        if color[start] == WHITE:
            found = visit(start)
            if found:
                return found
    return None


def layer_order(graph: OcclusionGraph) -> LayerResult:
    """Assign depth layers from occlusion edges (occluders in earlier layers).

    Cycles are resolved by repeatedly removing the lowest-score edge on a
    detected cycle; removed edges are reported. Within a layer, nodes are
    sorted for determinism.
    """
    score = {(p.occluder, p.occludee): p.score for p in graph.pairs}
    edges = set(score)
    removed: list[OcclusionPair] = []
    nodes = list(graph.nodes)

    def adjacency():
        adj = {v: [] for v in nodes}
        for u, v in sorted(edges, key=str):
            adj[u].append(v)
        return adj

    while True:
        cycle = _find_cycle(nodes, adjacency())
        if cycle is None:
            break
        weakest = min(cycle, key=lambda e: (score[e], str(e)))
        edges.discard(weakest)
        removed.append(OcclusionPair(weakest[0], weakest[1], score[weakest]))

    depth = {v: 0 for v in nodes}
    indeg = {v: 0 for v in nodes}
    for _, v in edges:
        indeg[v] += 1
    queue = [v for v in nodes if indeg[v] == 0]
    while queue:
        u = queue.pop(0)
        for u2, v in edges:
            if u2 != u:
                continue
            depth[v] = max(depth[v], depth[u] + 1)
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    n_layers = max(depth.values(), default=-1) + 1
    layers = [[] for _ in range(n_layers)]
    for v in nodes:
        layers[depth[v]].append(v)
    for layer in layers:
        layer.sort(key=str)
    return LayerResult(layers=layers, removed=removed)


def save_graphs(path: str | Path, graphs: dict[Hashable, OcclusionGraph],
                accuracy: float | None = None) -> None:
    """Dump per-image edge lists (and optional accuracy) as JSON."""
    doc = {"images": {str(k): g.to_dict() for k, g in graphs.items()}}
    if accuracy is not None:
        doc["depth_accuracy"] = accuracy
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))

import numpy as np
import pytest

from segpaint import scenegen
from segpaint.depthlayer import (
    OcclusionGraph,
    OcclusionPair,
    depth_accuracy,
    gt_pairs,
    infer_occlusions,
    layer_order,
    save_graphs,
)
from segpaint.scenegen import SceneConfig, derive_masks, generate_scene


def blocks(h, w, spec):
    m = np.zeros((h, w), dtype=np.float32)
    for (y0, y1, x0, x1) in spec:
        m[y0:y1, x0:x1] = 1.0
    return m


# --- infer_occlusions ------------------------------------------------------------

def test_hand_counted_edge():
    # A's visible mask: 16 px; B hidden: 4 px fully inside it -> IoU 4/16 = 0.25
    sv_a = blocks(12, 12, [(0, 4, 0, 4)])
    sf_a = sv_a
    sv_b = blocks(12, 12, [(4, 8, 0, 4)])
    si_b = blocks(12, 12, [(2, 4, 0, 2)])
    sf_b = np.maximum(sv_b, si_b)
    graph = infer_occlusions([(sv_a, sf_a), (sv_b, sf_b)], threshold=0.05, ids=["A", "B"])
    assert graph.edges() == {("A", "B")}
    assert graph.pairs[0].score == 4 / 16


def test_no_edges_without_overlap():
    sv_a = blocks(8, 8, [(0, 3, 0, 3)])
    sv_b = blocks(8, 8, [(5, 8, 5, 8)])
    graph = infer_occlusions([(sv_a, sv_a), (sv_b, sv_b)])
    assert graph.edges() == set()


def test_threshold_is_strict_filter():
    sv_a = blocks(12, 12, [(0, 4, 0, 4)])
    sv_b = blocks(12, 12, [(4, 8, 0, 4)])
    si_b = blocks(12, 12, [(2, 4, 0, 2)])
    sf_b = np.maximum(sv_b, si_b)
    graph = infer_occlusions([(sv_a, sv_a), (sv_b, sf_b)], threshold=1.0)
    assert graph.edges() == set()


def test_frame_mismatch_rejected():
    with pytest.raises(ValueError, match="frame"):
        infer_occlusions([(np.zeros((4, 4)), np.zeros((4, 4))),
                          (np.zeros((5, 5)), np.zeros((5, 5)))])


def test_object_with_empty_hidden_region_has_no_incoming_edges():
    sv_a = blocks(8, 8, [(0, 4, 0, 8)])
    sv_b = blocks(8, 8, [(4, 8, 0, 8)])
    graph = infer_occlusions([(sv_a, sv_a), (sv_b, sv_b)])
    assert all(p.occludee != 0 for p in graph.pairs)
    assert graph.edges() == set()


# --- gt pairs + accuracy -----------------------------------------------------------

def test_gt_masks_reproduce_gt_pairs_on_generated_scenes():
    for seed in range(8):
        scene = generate_scene(SceneConfig(), np.random.default_rng(seed))
        samples = derive_masks(scene)
        ids = [s.object_id for s in samples]
        gt = gt_pairs(samples, 0.05, ids=ids)
        graph = infer_occlusions([(s.sv, s.sf) for s in samples], 0.05, ids=ids)
        assert graph.edges() == gt
    assert depth_accuracy({"s": graph}, {"s": gt}) == 1.0


def test_gt_pairs_point_front_to_back():
    scene = generate_scene(SceneConfig(sprite_count=(4, 6)), np.random.default_rng(5))
    samples = derive_masks(scene)
    ranks = {s.object_id: scene.sprites[s.object_id].depth_rank for s in samples}
    for q, p in gt_pairs(samples):
        assert ranks[q] < ranks[p]


def test_depth_accuracy_examples():
    g_full = OcclusionGraph(nodes=(0, 1), pairs=[OcclusionPair(0, 1, 0.5)])
    g_empty = OcclusionGraph(nodes=(0, 1), pairs=[])
    assert depth_accuracy({"a": g_full}, {"a": {(0, 1)}}) == 1.0
    assert depth_accuracy({"a": g_empty}, {"a": {(0, 1)}}) == 0.0
    # mixed three-image case: 2/2, 1/2, 0/1 -> mean 0.5
    g1 = OcclusionGraph(nodes=(0, 1, 2),
                        pairs=[OcclusionPair(0, 1, 0.2), OcclusionPair(1, 2, 0.2)])
    g2 = OcclusionGraph(nodes=(0, 1, 2), pairs=[OcclusionPair(0, 1, 0.2)])
    g3 = OcclusionGraph(nodes=(0, 1), pairs=[])
    pred = {"a": g1, "b": g2, "c": g3}
    gt = {"a": {(0, 1), (1, 2)}, "b": {(0, 1), (1, 2)}, "c": {(0, 1)}}
    assert depth_accuracy(pred, gt) == pytest.approx((1.0 + 0.5 + 0.0) / 3)


def test_depth_accuracy_reversed_edge_counts_incorrect():
    g = OcclusionGraph(nodes=(0, 1), pairs=[OcclusionPair(1, 0, 0.5)])
    assert depth_accuracy({"a": g}, {"a": {(0, 1)}}) == 0.0


def test_depth_accuracy_missing_image_rejected():
    with pytest.raises(ValueError, match="no predictions"):
        depth_accuracy({}, {"a": {(0, 1)}})


def test_depth_accuracy_skips_pairless_images():
    g = OcclusionGraph(nodes=(0, 1), pairs=[OcclusionPair(0, 1, 0.5)])
    empty = OcclusionGraph(nodes=(0,), pairs=[])
    assert depth_accuracy({"a": g, "b": empty}, {"a": {(0, 1)}, "b": set()}) == 1.0


# --- layer_order ----------------------------------------------------------------------

def test_chain_layers():
    g = OcclusionGraph(nodes=("A", "B", "C"),
                       pairs=[OcclusionPair("A", "B", 0.4), OcclusionPair("B", "C", 0.3)])
    res = layer_order(g)
    assert res.layers == [["A"], ["B"], ["C"]]
    assert res.removed == []


def test_no_edges_single_layer():
    g = OcclusionGraph(nodes=(3, 1, 2), pairs=[])
    res = layer_order(g)
    assert res.layers == [[1, 2, 3]]


def test_two_cycle_drops_weakest_edge():
    g = OcclusionGraph(
        nodes=("A", "B"),
        pairs=[OcclusionPair("A", "B", 0.3), OcclusionPair("B", "A", 0.1)],
    )
    res = layer_order(g)
    assert res.layers == [["A"], ["B"]]
    assert [(p.occluder, p.occludee, p.score) for p in res.removed] == [("B", "A", 0.1)]


def test_diamond_layers():
    g = OcclusionGraph(
        nodes=("A", "B", "C", "D"),
        pairs=[OcclusionPair("A", "B", 0.5), OcclusionPair("A", "C", 0.5),
               OcclusionPair("B", "D", 0.5), OcclusionPair("C", "D", 0.5)],
    )
    assert layer_order(g).layers == [["A"], ["B", "C"], ["D"]]


def test_save_graphs(tmp_path):
    g = OcclusionGraph(nodes=(0, 1), pairs=[OcclusionPair(0, 1, 0.25)])
    out = tmp_path / "graphs.json"
    save_graphs(out, {"scene_a": g}, accuracy=0.75)
    import json

    doc = json.loads(out.read_text())
    assert doc["depth_accuracy"] == 0.75
    assert doc["images"]["scene_a"]["pairs"][0]["score"] == 0.25

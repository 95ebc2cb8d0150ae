"""Image-side encoder: oracles for attention, scoring, graph build and pooling."""
import math

import numpy as np
import pytest
import torch

from magic import (ModelDims, RelationalGraphEncoder, SceneConfig, attend_text,
                   generate_scene, select_pool)
from magic.data import (NODE_ATTRIBUTE, NODE_RELATIONSHIP, NODE_TEXT,
                        MultimodalScene, ObjectFeature, TextToken)

from oracles import (dot, linear, mat_vec, relu_vec, softmax_list,
                     torch_params_to_lists, vec_add)


def make_scene(rng, n_objects, n_tokens, d_raw=8, scene_id="t"):
    objects = [ObjectFeature(feature=rng.standard_normal(d_raw),
                             box=rng.uniform(0.0, 0.5, 4), label_id=i)
               for i in range(n_objects)]
    tokens = [TextToken(feature=rng.standard_normal(d_raw),
                        surface=f"tok{j}", box=rng.uniform(0.0, 0.5, 4))
              for j in range(n_tokens)]
    return MultimodalScene(objects=objects, tokens=tokens, scene_id=scene_id)


# -- attend_text ----------------------------------------------------------------

def test_attention_single_token_takes_all_weight():
    q = torch.ones(4, dtype=torch.float64)
    tok = torch.tensor([[1.0, 2.0, 3.0, 4.0]], dtype=torch.float64)
    attended, weights = attend_text(q, tok)
    assert torch.allclose(weights, torch.tensor([1.0], dtype=torch.float64))
    assert torch.allclose(attended, tok[0])


def test_attention_equal_scores_split_evenly():
    q = torch.zeros(4, dtype=torch.float64)
    toks = torch.tensor([[1.0, 0, 0, 0], [0, 1.0, 0, 0]], dtype=torch.float64)
    attended, weights = attend_text(q, toks)
    assert torch.allclose(weights, torch.full((2,), 0.5, dtype=torch.float64))
    assert torch.allclose(attended, torch.tensor([0.5, 0.5, 0, 0], dtype=torch.float64))


def test_attention_empty_token_list():
    attended, weights = attend_text(torch.ones(6, dtype=torch.float64), None)
    assert torch.equal(attended, torch.zeros(6, dtype=torch.float64))
    assert weights.numel() == 0


def test_attention_dimension_mismatch():
    with pytest.raises(ValueError):
        attend_text(torch.ones(4, dtype=torch.float64),
                    torch.ones(2, 5, dtype=torch.float64))


def test_attention_matches_scalar_oracle_seed11():
    rng = np.random.default_rng(11)
    d = 6
    q = rng.standard_normal(d)
    toks = rng.standard_normal((3, d))
    attended, weights = attend_text(torch.from_numpy(q), torch.from_numpy(toks))

    scores = [dot(list(q), list(t)) / math.sqrt(d) for t in toks]
    w = softmax_list(scores)
    expected = [sum(w[i] * toks[i][k] for i in range(3)) for k in range(d)]
    assert np.allclose(weights.numpy(), w, atol=1e-12)
    assert np.allclose(attended.numpy(), expected, atol=1e-12)


# -- score_central_objects ---------------------------------------------------------

def test_identical_objects_score_uniformly(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=0)
    aug = torch.ones(5, 2 * tiny_dims.d, dtype=torch.float64)
    scores = enc.score_central_objects(aug)
    assert torch.allclose(scores, torch.full((5,), 0.2, dtype=torch.float64))


def test_scores_always_normalized(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=0)
    rng = np.random.default_rng(2)
    for n in (1, 3, 8):
        scores = enc.score_central_objects(
            torch.from_numpy(rng.standard_normal((n, 2 * tiny_dims.d)))).detach()
        assert abs(float(scores.sum()) - 1.0) <= 1e-9
        assert float(scores.min()) >= 0.0


def test_empty_object_list_rejected(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=0)
    with pytest.raises(ValueError):
        enc.score_central_objects([])


def test_scorer_matches_scalar_mlp_oracle_seed3(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=3)
    rng = np.random.default_rng(3)
    aug = rng.standard_normal((4, 2 * tiny_dims.d))
    scores = enc.score_central_objects(torch.from_numpy(aug))

    params = torch_params_to_lists(enc)
    logits = []
    for row in aug:
        hidden = relu_vec(linear(params["score_hidden.weight"],
                                 params["score_hidden.bias"], list(row)))
        logits.append(linear(params["score_out.weight"],
                             params["score_out.bias"], hidden)[0])
    expected = softmax_list(logits)
    assert np.allclose(scores.detach().numpy(), expected, atol=1e-10)


# -- select_pool -------------------------------------------------------------------

def test_select_pool_argmax():
    pool = select_pool(torch.tensor([0.1, 0.6, 0.3], dtype=torch.float64), 1)
    assert pool.indices == [1]


def test_select_pool_tie_breaks_to_lower_index():
    pool = select_pool(torch.tensor([0.5, 0.5], dtype=torch.float64), 1)
    assert pool.indices == [0]


def test_select_pool_caps_at_object_count():
    pool = select_pool(torch.tensor([0.2, 0.3, 0.5], dtype=torch.float64), 10)
    assert sorted(pool.indices) == [0, 1, 2]


def test_select_pool_default_size_is_three():
    assert ModelDims(d=8, d_raw=4).n_pool == 3


def test_select_pool_permutation_equivariant():
    rng = np.random.default_rng(0)
    scores = rng.uniform(0.1, 1.0, 6)
    scores /= scores.sum()
    base = select_pool(torch.from_numpy(scores), 3).indices
    perm = rng.permutation(6)
    permuted = select_pool(torch.from_numpy(scores[perm]), 3).indices
    assert [int(perm[i]) for i in permuted] == base


# -- build_mrg ------------------------------------------------------------------------

def test_single_object_graph_has_no_neighbour_nodes(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=1)
    rng = np.random.default_rng(0)
    scene = make_scene(rng, n_objects=1, n_tokens=0)
    graph = enc.build_mrg(scene, 0)
    assert graph.count(NODE_RELATIONSHIP) == 0
    assert graph.count(NODE_ATTRIBUTE) == 0
    assert graph.count(NODE_TEXT) == 0


def test_epsilon_one_suppresses_all_text_nodes(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=1)
    rng = np.random.default_rng(1)
    scene = make_scene(rng, n_objects=3, n_tokens=4)
    graph = enc.build_mrg(scene, 0, epsilon=1.0)
    assert graph.count(NODE_TEXT) == 0


def test_text_gating_monotone_in_epsilon(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=2)
    rng = np.random.default_rng(4)
    scene = make_scene(rng, n_objects=4, n_tokens=6)
    counts = [enc.build_mrg(scene, 1, epsilon=eps).count(NODE_TEXT)
              for eps in (0.01, 0.1, 0.2, 0.5, 1.0)]
    assert counts == sorted(counts, reverse=True)


def test_invalid_central_index(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=1)
    scene = make_scene(np.random.default_rng(0), 2, 0)
    with pytest.raises(ValueError):
        enc.build_mrg(scene, 5)


def test_build_mrg_matches_scalar_oracle_seed5(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=5)
    rng = np.random.default_rng(5)
    scene = make_scene(rng, n_objects=3, n_tokens=2)
    epsilon = 0.1
    graph = enc.build_mrg(scene, 0, epsilon=epsilon, k_rel=2)

    p = torch_params_to_lists(enc)
    d = tiny_dims.d
    objs = [linear(p["object_proj.weight"], p["object_proj.bias"],
                   list(o.feature)) for o in scene.objects]
    toks = [linear(p["token_proj.weight"], p["token_proj.bias"],
                   list(t.feature)) for t in scene.tokens]

    # neighbours of object 0 sorted by box-center distance
    def center(o):
        return [o.box[0] + o.box[2] / 2.0, o.box[1] + o.box[3] / 2.0]
    c0 = center(scene.objects[0])
    dists = []
    for i in (1, 2):
        ci = center(scene.objects[i])
        dists.append(((ci[0] - c0[0]) ** 2 + (ci[1] - c0[1]) ** 2, i))
    order = [i for _, i in sorted(dists)]

    rel_nodes = [mat_vec(p["rel_weight"], objs[i]) for i in order]
    attr_nodes = [mat_vec(p["attr_weight"], objs[i] + list(scene.objects[i].box))
                  for i in order]
    scores = [dot(objs[0], t) / math.sqrt(d) for t in toks]
    weights = softmax_list(scores)
    text_nodes = [(j, [weights[j] * x for x in toks[j]])
                  for j in range(2) if weights[j] > epsilon]

    got_rel = [n.embedding.detach().numpy() for n in graph.nodes
               if n.kind == NODE_RELATIONSHIP]
    got_attr = [n.embedding.detach().numpy() for n in graph.nodes
                if n.kind == NODE_ATTRIBUTE]
    got_text = [n.embedding.detach().numpy() for n in graph.nodes
                if n.kind == NODE_TEXT]
    assert len(got_rel) == 2 and len(got_attr) == 2
    for got, want in zip(got_rel, rel_nodes):
        assert np.allclose(got, want, atol=1e-10)
    for got, want in zip(got_attr, attr_nodes):
        assert np.allclose(got, want, atol=1e-10)
    assert len(got_text) == len(text_nodes)
    for got, (_, want) in zip(got_text, text_nodes):
        assert np.allclose(got, want, atol=1e-10)
    assert np.allclose(graph.central.detach().numpy(), objs[0], atol=1e-10)


# -- encode_mrg -------------------------------------------------------------------------

def test_encode_empty_graph_is_relu_chain_of_central(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=1)
    rng = np.random.default_rng(3)
    scene = make_scene(rng, 1, 0)
    graph = enc.build_mrg(scene, 0)
    out = enc.encode_mrg(graph)
    h = graph.central
    for w0 in enc.gcn_self:
        h = torch.relu(w0 @ h)
    assert torch.allclose(out, h)


def test_identity_configuration_passes_central_through(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=1)
    with torch.no_grad():
        for w0, w1 in zip(enc.gcn_self, enc.gcn_node):
            w0.copy_(torch.eye(tiny_dims.d, dtype=torch.float64))
            w1.zero_()
    rng = np.random.default_rng(3)
    scene = make_scene(rng, 3, 2)
    graph = enc.build_mrg(scene, 0)
    graph.central = torch.rand(tiny_dims.d, dtype=torch.float64)  # nonnegative
    out = enc.encode_mrg(graph)
    assert torch.allclose(out, graph.central)


def test_encode_mrg_matches_scalar_oracle_seed9():
    dims = ModelDims(d=6, d_raw=5, gcn_layers=1, k_rel=2, epsilon=0.1)
    enc = RelationalGraphEncoder(dims, seed=9)
    rng = np.random.default_rng(9)
    scene = make_scene(rng, n_objects=3, n_tokens=1, d_raw=5)
    graph = enc.build_mrg(scene, 1)
    out = enc.encode_mrg(graph)

    p = torch_params_to_lists(enc)
    total = mat_vec(p["gcn_self.0"], [float(x) for x in graph.central])
    for node in graph.nodes:
        total = vec_add(total, mat_vec(p["gcn_node.0"],
                                       [float(x) for x in node.embedding]))
    expected = relu_vec(total)
    assert np.allclose(out.detach().numpy(), expected, atol=1e-10)


# -- encode_image ----------------------------------------------------------------------

def test_encode_image_singleton_pool_equals_argmax_graph(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=6)
    rng = np.random.default_rng(6)
    scene = make_scene(rng, 5, 3)
    outs = enc.encode_image(scene, n_pool=1)
    assert len(outs) == 1
    pool = enc.select_central_pool(scene, 1)
    direct = enc.encode_mrg(enc.build_mrg(scene, pool.indices[0]))
    assert torch.equal(outs[0], direct)


def test_encode_image_length_tracks_pool_size(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=6)
    rng = np.random.default_rng(7)
    scene = make_scene(rng, 6, 2)
    assert len(enc.encode_image(scene, n_pool=5)) == 5
    assert len(enc.encode_image(make_scene(rng, 2, 0), n_pool=5)) == 2


def test_encode_image_permutation_invariant_as_multiset(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=8)
    rng = np.random.default_rng(8)
    scene = make_scene(rng, 5, 3)
    outs = enc.encode_image(scene, n_pool=3)

    perm = [3, 0, 4, 1, 2]
    permuted_scene = MultimodalScene(
        objects=[scene.objects[i] for i in perm],
        tokens=scene.tokens, scene_id="perm")
    outs_perm = enc.encode_image(permuted_scene, n_pool=3)

    a = sorted(tuple(v.detach().numpy().round(12)) for v in outs)
    b = sorted(tuple(v.detach().numpy().round(12)) for v in outs_perm)
    assert a == b


def test_pool_rules(tiny_dims):
    enc = RelationalGraphEncoder(tiny_dims, seed=1)
    objects = []
    boxes = [(0.45, 0.45, 0.1, 0.1),   # centered, small
             (0.0, 0.0, 0.9, 0.9),     # huge
             (0.8, 0.8, 0.05, 0.05)]   # corner, tiny
    rng = np.random.default_rng(0)
    for i, box in enumerate(boxes):
        objects.append(ObjectFeature(feature=rng.standard_normal(8),
                                     box=np.array(box, dtype=np.float64), label_id=i))
    scene = MultimodalScene(objects=objects, tokens=[], scene_id="rules")
    assert enc.pool_by_rule(scene, "center", 1) == [0]
    assert enc.pool_by_rule(scene, "large", 1) == [1]
    r1 = enc.pool_by_rule(scene, "random", 2, rng=np.random.default_rng(5))
    r2 = enc.pool_by_rule(scene, "random", 2, rng=np.random.default_rng(5))
    assert r1 == r2
    assert enc.pool_by_rule(scene, "top_score", 2) == enc.select_central_pool(scene, 2).indices
    with pytest.raises(ValueError):
        enc.pool_by_rule(scene, "nonsense", 1)

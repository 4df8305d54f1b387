"""Intent mixing, relation-aware aggregation, masked transformer propagation."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgtn import autodiff as ad
from kgtn import intents
from kgtn.data import InteractionGraph, KnowledgeGraph
from kgtn.gradcheck import check_gradients

RNG = np.random.default_rng(7)


def head_params(d, n_heads, identity=False):
    dh = d // n_heads
    heads = []
    for h in range(n_heads):
        if identity:
            w = np.eye(d)[h * dh:(h + 1) * dh]
            heads.append(intents.HeadProjections(*(ad.parameter(w.copy()) for _ in range(3))))
        else:
            heads.append(
                intents.HeadProjections(*(ad.parameter(RNG.normal(size=(dh, d)) * 0.3) for _ in range(3)))
            )
    return intents.TransformerLayerParams(heads=heads)


# ---------------------------------------------------------------------------
# intent assignment / mixing


def test_assignment_single_intent():
    e = ad.constant([[0.3, -0.7]])
    c = ad.constant([[1.0, 1.0]])
    np.testing.assert_allclose(intents.intent_assignment(e, c).values, [[1.0]])


def test_assignment_identical_prototypes_uniform():
    e = ad.constant(RNG.normal(size=(3, 4)))
    c = ad.constant(np.tile(RNG.normal(size=4), (5, 1)))
    np.testing.assert_allclose(intents.intent_assignment(e, c).values, np.full((3, 5), 0.2), atol=1e-12)


def test_assignment_two_intent_oracle():
    e = ad.constant([[1.0, 0.0]])
    c = ad.constant([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(
        intents.intent_assignment(e, c).values, [[0.73105857863, 0.26894142137]], atol=1e-9
    )


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_assignment_rows_sum_to_one(n, k, seed):
    rng = np.random.default_rng(seed)
    e = ad.constant(rng.normal(size=(n, 4)))
    c = ad.constant(rng.normal(size=(k, 4)))
    out = intents.intent_assignment(e, c).values
    np.testing.assert_allclose(out.sum(axis=1), np.ones(n), atol=1e-9)


def test_assignment_logit_shift_invariance():
    # with e a basis vector, shifting one prototype coordinate shifts every
    # logit by the same constant
    e = ad.constant([[1.0, 0.0, 0.0]])
    c = RNG.normal(size=(4, 3))
    shifted = c.copy()
    shifted[:, 0] += 2.5
    p1 = intents.intent_assignment(e, ad.constant(c)).values
    p2 = intents.intent_assignment(e, ad.constant(shifted)).values
    np.testing.assert_allclose(p1, p2, atol=1e-12)


def test_mix_single_intent_returns_prototype():
    e = ad.constant([[0.4, 0.6]])
    c = ad.constant([[2.0, -1.0]])
    np.testing.assert_array_equal(intents.intent_mix(e, c).values, [[2.0, -1.0]])


def test_mix_identical_prototypes_fixed_point():
    p = RNG.normal(size=3)
    c = ad.constant(np.tile(p, (6, 1)))
    e = ad.constant(RNG.normal(size=(2, 3)))
    np.testing.assert_allclose(intents.intent_mix(e, c).values, np.tile(p, (2, 1)), atol=1e-12)


def test_mix_weighted_sum_oracle():
    e = ad.constant([[1.0, 0.0]])
    c = ad.constant([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(
        intents.intent_mix(e, c).values, [[0.73105857863, 0.26894142137]], atol=1e-9
    )


def test_mix_differentiable_through_both():
    e = ad.parameter(RNG.normal(size=(2, 3)))
    c = ad.parameter(RNG.normal(size=(4, 3)))
    w = ad.constant(RNG.normal(size=(2, 3)))
    res = check_gradients(lambda: ad.sum_all(ad.mul(intents.intent_mix(e, c), w)),
                          [("e", e), ("c", c)])
    assert res.max_rel_err < 1e-4


# ---------------------------------------------------------------------------
# kg attention / aggregation


def _kg(triples, n_entities):
    return KnowledgeGraph(np.array(triples), n_entities=n_entities)


def test_kg_attention_singleton():
    kg = _kg([(0, 0, 1)], 2)
    ent = ad.constant(RNG.normal(size=(2, 3)))
    rel = ad.constant(RNG.normal(size=(1, 3)))
    beta = intents.kg_attention(ent, rel, kg.full_edges())
    np.testing.assert_allclose(beta.values, [1.0])


def test_kg_attention_identical_neighbors_split_evenly():
    # two slots with the same relation and same tail embedding
    kg = _kg([(0, 0, 1), (0, 0, 2)], 3)
    ent = np.vstack([RNG.normal(size=3), np.tile(RNG.normal(size=3), (2, 1))])
    beta = intents.kg_attention(ad.constant(ent), ad.constant(RNG.normal(size=(1, 3))), kg.full_edges())
    np.testing.assert_allclose(beta.values, [0.5, 0.5], atol=1e-12)


def test_kg_attention_concat_logit_identity():
    # (e_i || e_r) . (e_v || e_r) == e_i . e_v + ||e_r||^2
    for _ in range(5):
        ei, ev, er = RNG.normal(size=3), RNG.normal(size=3), RNG.normal(size=3)
        lhs = np.concatenate([ei, er]) @ np.concatenate([ev, er])
        rhs = ei @ ev + er @ er
        assert abs(lhs - rhs) < 1e-12


def test_kg_aggregate_single_neighbor_identity_gate():
    kg = _kg([(0, 0, 1)], 2)
    ent = ad.constant(RNG.normal(size=(2, 3)))
    rel = ad.constant(np.ones((1, 3)))
    out = intents.kg_aggregate(ent, rel, kg.full_edges()).values
    np.testing.assert_allclose(out[0], ent.values[1], atol=1e-12)


def test_kg_aggregate_zero_relation_annihilates():
    kg = _kg([(0, 0, 1)], 2)
    ent = ad.constant(RNG.normal(size=(2, 3)))
    rel = ad.constant(np.zeros((1, 3)))
    out = intents.kg_aggregate(ent, rel, kg.full_edges()).values
    np.testing.assert_array_equal(out[0], np.zeros(3))


def test_kg_aggregate_matches_naive_loop():
    triples = [(0, 0, 1), (0, 1, 2), (1, 0, 2)]
    kg = _kg(triples, 3)
    ent = RNG.normal(size=(3, 4))
    rel = RNG.normal(size=(2, 4))
    out = intents.kg_aggregate(ad.constant(ent), ad.constant(rel), kg.full_edges()).values

    expected = ent.copy()
    for head in range(3):
        slots = [(r, t) for h, r, t in triples if h == head]
        if not slots:
            continue
        logits = np.array([ent[head] @ ent[t] + rel[r] @ rel[r] for r, t in slots])
        w = np.exp(logits - logits.max())
        w = w / w.sum()
        acc = np.zeros(4)
        for wk, (r, t) in zip(w, slots):
            acc += wk * rel[r] * ent[t]
        expected[head] = acc / len(slots)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_kg_aggregate_empty_neighborhood_passes_through():
    kg = _kg([(0, 0, 1)], 4)
    ent = ad.constant(RNG.normal(size=(4, 3)))
    rel = ad.constant(RNG.normal(size=(1, 3)))
    out = intents.kg_aggregate(ent, rel, kg.full_edges()).values
    np.testing.assert_array_equal(out[1:], ent.values[1:])


# ---------------------------------------------------------------------------
# transformer layer


def test_transformer_single_item_gets_full_attention():
    graph = InteractionGraph(1, 1, [(0, 0)])
    d = 4
    params = head_params(d, 2)
    users = ad.constant(RNG.normal(size=(1, d)))
    items = ad.constant(RNG.normal(size=(1, d)))
    new_u, _ = intents.transformer_layer(users, items, params, graph)
    expected = np.concatenate([items.values @ h.wv.values.T for h in params.heads], axis=1)
    np.testing.assert_allclose(new_u.values, expected, atol=1e-12)


def test_transformer_masked_pair_zero_gradient():
    # user 0 never interacted with item 2: d out_u0 / d item2 must be 0
    graph = InteractionGraph(2, 3, [(0, 0), (0, 1), (1, 2)])
    d = 4
    params = head_params(d, 2)
    users = ad.constant(RNG.normal(size=(2, d)))
    items = ad.parameter(RNG.normal(size=(3, d)))
    with ad.Tape() as tape:
        new_u, _ = intents.transformer_layer(users, items, params, graph)
        loss = ad.sum_all(ad.gather_rows(new_u, np.array([0])))
    tape.backward(loss)
    np.testing.assert_allclose(items.grad[2], np.zeros(d), atol=1e-12)
    assert np.abs(items.grad[:2]).max() > 0


def test_transformer_matches_dense_oracle():
    graph = InteractionGraph(2, 3, [(0, 0), (0, 2), (1, 1), (1, 2)])
    d = 4
    params = head_params(d, 1)
    users = RNG.normal(size=(2, d))
    items = RNG.normal(size=(3, d))
    new_u, new_i = intents.transformer_layer(
        ad.constant(users), ad.constant(items), params, graph
    )

    wq = params.heads[0].wq.values
    wk = params.heads[0].wk.values
    wv = params.heads[0].wv.values
    mask = np.zeros((2, 3))
    for u, i in graph.pairs:
        mask[u, i] = 1.0
    scale = 1.0 / np.sqrt(d / 1)

    logits = (users @ wq.T) @ (items @ wk.T).T * scale
    logits = np.where(mask > 0, logits, -np.inf)
    att = np.exp(logits - logits.max(axis=1, keepdims=True))
    att = att / att.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(new_u.values, att @ (items @ wv.T), atol=1e-10)

    logits_i = (items @ wq.T) @ (users @ wk.T).T * scale
    logits_i = np.where(mask.T > 0, logits_i, -np.inf)
    att_i = np.exp(logits_i - logits_i.max(axis=1, keepdims=True))
    att_i = att_i / att_i.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(new_i.values, att_i @ (users @ wv.T), atol=1e-10)


@pytest.mark.parametrize("n_heads", [1, 2, 4])
def test_transformer_head_concat_restores_dimension(n_heads):
    graph = InteractionGraph(3, 2, [(0, 0), (1, 1), (2, 0), (2, 1)])
    d = 8
    params = head_params(d, n_heads)
    new_u, new_i = intents.transformer_layer(
        ad.constant(RNG.normal(size=(3, d))), ad.constant(RNG.normal(size=(2, d))), params, graph
    )
    assert new_u.values.shape == (3, d)
    assert new_i.values.shape == (2, d)


def test_transformer_isolated_nodes_pass_through():
    graph = InteractionGraph(2, 2, [(0, 0)])  # user 1 and item 1 isolated
    d = 4
    params = head_params(d, 2)
    users = ad.constant(RNG.normal(size=(2, d)))
    items = ad.constant(RNG.normal(size=(2, d)))
    new_u, new_i = intents.transformer_layer(users, items, params, graph)
    np.testing.assert_array_equal(new_u.values[1], users.values[1])
    np.testing.assert_array_equal(new_i.values[1], items.values[1])


def test_transformer_attention_sums_to_one_over_random_instances():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n_u, n_i = rng.integers(2, 5), rng.integers(2, 5)
        pairs = {(int(rng.integers(n_u)), int(rng.integers(n_i))) for _ in range(6)}
        graph = InteractionGraph(n_u, n_i, sorted(pairs))
        users = ad.constant(rng.normal(size=(n_u, 4)))
        items = ad.constant(rng.normal(size=(n_i, 4)))
        q = ad.matmul(users, ad.transpose(ad.constant(rng.normal(size=(2, 4)))))
        k = ad.matmul(items, ad.transpose(ad.constant(rng.normal(size=(2, 4)))))
        src = np.repeat(np.arange(n_u), np.diff(graph.u_offsets))
        logits = ad.rowsum(ad.mul(ad.gather_rows(q, src), ad.gather_rows(k, graph.u_items)))
        alpha = ad.segment_softmax(logits, graph.u_offsets).values
        for u in range(n_u):
            seg = alpha[graph.u_offsets[u]:graph.u_offsets[u + 1]]
            if seg.size:
                assert abs(seg.sum() - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# forward_global


def _toy_setup(d=4, K=2, depth=1):
    graph = InteractionGraph(2, 3, [(0, 0), (0, 1), (1, 2)])
    kg = _kg([(0, 0, 3), (1, 1, 3), (2, 0, 4), (2, 1, 3)], 5)
    params = dict(
        user=ad.parameter(RNG.normal(size=(2, d))),
        ent=ad.parameter(RNG.normal(size=(5, d))),
        rel=ad.parameter(RNG.normal(size=(2, d))),
        cu=ad.parameter(RNG.normal(size=(K, d))),
        cv=ad.parameter(RNG.normal(size=(K, d))),
    )
    layers = [head_params(d, 2) for _ in range(depth)]
    return graph, kg, params, layers


def test_forward_global_depth_zero_is_mixed_base():
    graph, kg, p, layers = _toy_setup(depth=0)
    state = intents.forward_global(
        p["user"], p["ent"], p["rel"], p["cu"], p["cv"], [], graph, kg.full_edges(), 0, 3
    )
    assert state.depth == 0
    np.testing.assert_allclose(
        state.users[0].values, intents.intent_mix(p["user"], p["cu"]).values
    )
    items = ad.gather_rows(p["ent"], np.arange(3))
    np.testing.assert_allclose(
        state.items[0].values, intents.intent_mix(items, p["cv"]).values
    )


def test_forward_global_returns_all_layers():
    graph, kg, p, layers = _toy_setup(depth=2)
    state = intents.forward_global(
        p["user"], p["ent"], p["rel"], p["cu"], p["cv"], layers, graph, kg.full_edges(), 2, 3
    )
    assert len(state.users) == 3 and len(state.items) == 3
    for layer_users, layer_items in zip(state.users, state.items):
        assert np.isfinite(layer_users.values).all()
        assert np.isfinite(layer_items.values).all()


def test_forward_global_gradients_reach_every_parameter_class():
    graph, kg, p, layers = _toy_setup(depth=1)
    named = list(p.items()) + list(
        (f"l0.{n}", t) for n, t in layers[0].tensors()
    )

    def build():
        state = intents.forward_global(
            p["user"], p["ent"], p["rel"], p["cu"], p["cv"], layers, graph, kg.full_edges(), 1, 3
        )
        acc = ad.sum_all(ad.mul(state.users[-1], state.users[-1]))
        acc = acc + ad.sum_all(ad.mul(state.items[-1], state.items[-1]))
        return acc + ad.sum_all(ad.mul(state.prop_entities, state.prop_entities))

    res = check_gradients(build, named)
    assert res.max_rel_err < 1e-4, (res.worst_param, res.max_rel_err)

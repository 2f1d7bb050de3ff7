"""Property tests over randomly drawn graphs, mappings and tensors.

The five invariance families run 1000 cases each; the remaining
cross-module properties use fewer, since each case calls the exact solver.
"""

import json
from fractions import Fraction

import numpy as np
from hypothesis import example, given, settings
from hypothesis import strategies as st

from oracles import best_by_enumeration, ci_closure, dfs_score, error_free
from structmap import autodiff as ad
from structmap.amn import AMN, AmnConfig, jaccard, lstm_plan, sem_pick
from structmap.encoding import encode_pair, make_label_graphs, make_signature_graphs
from structmap.ir import (
    ExprNode, GraphBuilder, Mapping, RelGraph, deserialize, parse_sexpr, relabel, serialize, to_sexpr,
)
from structmap.matcher import enumerate_hypotheses, solve_exact
from structmap.smt import candidate_inferences, check_mapping, structural_score
from structmap.synth import TrainingExample

INVARIANCE = settings(max_examples=1000)
CROSS = settings(max_examples=150)

# (label, kind, arity, ordered)
VOCAB = [
    ("F", "function", 1, False),
    ("H", "function", 2, True),
    ("P", "predicate", 2, True),
    ("Q", "predicate", 2, True),
    ("R", "predicate", 3, True),
    ("C", "attribute", 1, False),
    ("AND", "predicate", 2, False),
    ("OR", "predicate", 3, False),
]

MODEL = AMN(AmnConfig(seed=11))
WIDE = AMN(AmnConfig(seed=12, epsilon=np.inf))


@st.composite
def graphs(draw, max_entities=4, max_exprs=6, vocab=VOCAB):
    b = GraphBuilder()
    ids = [b.entity(f"e{i}") for i in range(draw(st.integers(1, max_entities)))]
    for _ in range(draw(st.integers(0, max_exprs))):
        label, kind, arity, ordered = draw(st.sampled_from(vocab))
        args = draw(st.lists(st.sampled_from(ids), min_size=arity, max_size=arity))
        if kind != "function" and len(set(args)) < arity:
            continue
        before = len(b)
        v = b.expr(label, kind, args, ordered)
        if len(b) > before:
            ids.append(v)
    return b.build()


@st.composite
def pairs(draw):
    return draw(graphs()), draw(graphs())


@st.composite
def renamings(draw, g: RelGraph, h: RelGraph):
    symbols = sorted({n.label for n in (*g, *h)})
    fresh = draw(st.permutations(range(len(symbols))))
    return {s: f"Z{k}" for s, k in zip(symbols, fresh)}


def permute_unordered(g: RelGraph, draw) -> RelGraph:
    nodes = []
    for n in g:
        args = n.args
        if not n.ordered and len(args) > 1:
            args = tuple(draw(st.permutations(args)))
        nodes.append(ExprNode(n.id, n.label, n.kind, n.ordered, args))
    return RelGraph(nodes)


# --------------------------------------------------------------------------
# invariance families (1000 cases each)


@INVARIANCE
@given(data=st.data(), gg=pairs(), seed=st.integers(0, 2**32 - 1))
def test_renaming_invariance(data, gg, seed):
    g, h = gg
    names = data.draw(renamings(g, h))
    a = MODEL.forward(g, h, np.random.default_rng(seed))
    b = MODEL.forward(relabel(g, names), relabel(h, names), np.random.default_rng(seed))
    assert a == b


@INVARIANCE
@given(data=st.data(), gg=pairs(), seed=st.integers(0, 2**32 - 1))
def test_unordered_argument_permutation_invariance(data, gg, seed):
    g, h = gg
    g2 = permute_unordered(g, data.draw)
    h2 = permute_unordered(h, data.draw)
    rngs = [np.random.default_rng(seed)]
    L1, S1 = MODEL.embed(MODEL.encode_views(g, h, rngs))
    rngs = [np.random.default_rng(seed)]
    L2, S2 = MODEL.embed(MODEL.encode_views(g2, h2, rngs))
    np.testing.assert_allclose(L1.data, L2.data, atol=1e-12)
    np.testing.assert_allclose(S1.data, S2.data, atol=1e-12)
    assert MODEL.forward(g, h, np.random.default_rng(seed)) == MODEL.forward(g2, h2, np.random.default_rng(seed))


@INVARIANCE
@given(gg=pairs(), seed=st.integers(0, 2**32 - 1))
def test_signature_unit_norm(gg, seed):
    g, h = gg
    with ad.no_grad():
        _, S = MODEL.embed(MODEL.encode_views(g, h, [np.random.default_rng(seed)]))
    norms = np.linalg.norm(S.data[0], axis=-1)
    assert np.all(np.abs(norms - 1.0) <= 1e-9)
    # every node paired with itself has dot product one
    assert np.allclose(np.einsum("nd,nd->n", S.data[0], S.data[0]), 1.0, atol=1e-9)
    ents = [v for v in g.entities()]
    for i in ents:
        for j in ents:
            if i < j:
                assert S.data[0, i] @ S.data[0, j] < 1 - 1e-6


@INVARIANCE
@given(gg=pairs(), seed=st.integers(0, 2**32 - 1))
def test_decoder_terminates(gg, seed):
    g, h = gg
    with ad.no_grad():
        L, S = WIDE.embed(WIDE.encode_views(g, h, [np.random.default_rng(seed)]))
        cands = WIDE.candidate_pairs(L.data[0], len(g))
        assert len(cands) == len(g) * len(h)
        hh, sb, st_ = WIDE._tuples(L, S, cands, len(g))
        chosen = WIDE.decode(WIDE.encode(hh), sb, st_, cands)
    # each step removes its choice from the options, so at most |C| steps run
    assert len(chosen) <= len(cands)
    assert len(set(chosen)) == len(chosen) and set(chosen) <= set(cands)
    inf = WIDE.select_inferences(S, len(g), [b for b, _ in chosen])
    assert len(set(inf)) == len(inf) and not set(inf) & {b for b, _ in chosen}


@INVARIANCE
@given(gg=pairs(), data=st.data())
def test_serialization_round_trips(gg, data):
    g, h = gg
    assert parse_sexpr(to_sexpr(g)) == g
    assert deserialize(serialize(g)) == g
    corr = data.draw(st.sets(st.tuples(st.integers(0, len(g) - 1), st.integers(0, len(h) - 1)), max_size=5))
    matched = {b for b, _ in corr}
    inf = data.draw(st.sets(st.sampled_from(range(len(g)))).map(lambda s: s - matched))
    m = Mapping(frozenset(corr), frozenset(inf), data.draw(st.integers(0, 50)))
    assert deserialize(serialize(m)) == m
    ex = TrainingExample(g, h, frozenset(corr), frozenset(inf))
    back = TrainingExample.from_dict(json.loads(json.dumps(ex.to_dict())))
    assert (back.base, back.target, back.gold_m, back.gold_ci) == (g, h, ex.gold_m, ex.gold_ci)
    lg, lh, la = make_label_graphs(g, h)
    assert json.loads(json.dumps(la.to_dict()))["symbols"] == dict(sorted(la.symbols.items()))


@INVARIANCE
@given(arrays=st.lists(st.tuples(st.lists(st.integers(0, 3), max_size=3), st.integers(0, 2**31)), max_size=4))
def test_tensor_container_round_trip(tmp_path_factory, arrays):
    rng_data = {f"t{i}": np.random.default_rng(s).normal(size=tuple(shape)) for i, (shape, s) in enumerate(arrays)}
    path = tmp_path_factory.getbasetemp() / "prop.bin"
    ad.save_tensors(path, rng_data, {"note": "x"})
    back, meta = ad.load_tensors(path)
    assert meta["note"] == "x" and set(back) == set(rng_data)
    for k, v in rng_data.items():
        assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()


# --------------------------------------------------------------------------
# cross-module properties


@CROSS
@given(gg=pairs())
def test_exact_solver_is_optimal_and_error_free(gg):
    g, h = gg
    if len(enumerate_hypotheses(g, h)) > 12:
        return
    m = solve_exact(g, h)
    assert check_mapping(g, h, m.correspondences).error_free
    assert error_free(g, h, m.correspondences)
    assert m.score == structural_score(g, h, m.correspondences) == dfs_score(g, h, m.correspondences)
    assert m.score == best_by_enumeration(g, h)
    assert m.inferences == candidate_inferences(g, m.correspondences) == ci_closure(g, m.correspondences)


@CROSS
@given(gg=pairs(), data=st.data())
def test_inferences_never_matched(gg, data):
    g, h = gg
    corr = data.draw(st.sets(st.tuples(st.integers(0, len(g) - 1), st.integers(0, len(h) - 1)), max_size=6))
    ci = candidate_inferences(g, corr)
    assert not ci & {b for b, _ in corr}
    assert ci == ci_closure(g, corr)


@CROSS
@given(gg=pairs(), data=st.data())
def test_score_invariant_under_renaming(gg, data):
    g, h = gg
    names = data.draw(renamings(g, h))
    if len(enumerate_hypotheses(g, h)) > 12:
        return
    assert solve_exact(g, h).score == solve_exact(relabel(g, names), relabel(h, names)).score


@CROSS
@given(gg=pairs(), seed=st.integers(0, 2**32 - 1))
def test_label_assignment_is_consistent_and_injective(gg, seed):
    g, h = gg
    lg, lh, la = make_label_graphs(g, h, np.random.default_rng(seed))
    assert len(set(la.symbols.values())) == len(la.symbols)
    for orig, new in ((g, lg), (h, lh)):
        for a, b in zip(orig, new):
            assert (b.label == "ENT") == a.is_entity and b.args == a.args
            if not a.is_entity:
                assert b.label == la.symbols[a.label]
    sg, sh, sa = make_signature_graphs(g, h, np.random.default_rng(seed))
    ids = list(sa.base_entities.values()) + list(sa.target_entities.values())
    assert len(set(ids)) == len(ids)


@CROSS
@given(gg=pairs())
def test_layer_schedule_respects_dependencies(gg):
    g, h = gg
    enc = encode_pair(g, h)
    plan_layers = {int(v): k for k, layer in enumerate(enc.layers) for v in layer}
    assert sorted(plan_layers) == list(range(enc.n))
    for parent, child, _ in enc.edges:
        assert plan_layers[int(child)] < plan_layers[int(parent)]
    lstm_plan(enc.edges, enc.layers, 4)


@CROSS
@given(st.lists(st.frozensets(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=4), min_size=1, max_size=6))
@example([frozenset({(0, 0), (0, 1)}), frozenset({(0, 0), (0, 2), (0, 3), (1, 0)}),
          frozenset({(0, 0), (0, 2), (1, 0), (1, 1)})])  # tie that float summation order breaks
def test_sem_pick_maximises_agreement(sets):
    runs = [Mapping(s) for s in sets]
    i = sem_pick(runs)
    # exact agreement totals, so ties are ties
    exact = lambda a, b: Fraction(len(a & b), len(a | b)) if a | b else Fraction(1)
    totals = [sum(exact(a, b) for b in sets) for a in sets]
    assert totals[i] == max(totals)
    assert all(totals[j] < totals[i] for j in range(i))
    for a in sets:
        for b in sets:
            assert jaccard(a, b) == jaccard(b, a) == float(exact(a, b))


@CROSS
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=6), st.lists(st.booleans(), min_size=6, max_size=6))
def test_masked_softmax_is_a_distribution(xs, mask):
    mask = np.array(mask[:len(xs)])
    if not mask.any():
        mask[0] = True
    p = ad.softmax(ad.Tensor(np.array(xs)), axis=-1, mask=mask).data
    assert abs(p.sum() - 1) < 1e-12 and np.all(p[~mask] == 0) and np.all(p >= 0)

import numpy as np
import pytest

from conftest import A, FULL, S
from structmap import autodiff as ad
from structmap.amn import (
    AMN, AmnConfig, Trainer, dag_lstm, init_params, jaccard, lstm_plan, sem_pick, sem_select,
)
from structmap.encoding import encode_pair
from structmap.ir import Mapping, parse_sexpr, relabel
from structmap.smt import candidate_inferences
from structmap.synth import desk_params, generate


@pytest.fixture(scope="module")
def model():
    return AMN(AmnConfig(seed=1))


def _embed(model, gB, gT, seed=0, views=1):
    rngs = [np.random.default_rng([seed, v]) for v in range(views)]
    return model.embed(model.encode_views(gB, gT, rngs))


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def test_leaf_embedding_formula(model):
    g = parse_sexpr("e")
    enc = encode_pair(g, g)
    p = model.params
    L, _ = model.embed([enc])
    s = p["label.emb"].data[enc.label_tokens[0]]
    z = p["label.W"].data @ s + p["label.b"].data
    d = 32
    expected = sigmoid(z[d:2 * d]) * np.tanh(sigmoid(z[:d]) * np.tanh(z[2 * d:3 * d]))
    np.testing.assert_allclose(L.data[0, 0], expected, atol=1e-12)


def test_unordered_children_permutation(model):
    # same unordered node with arguments built in opposite order
    g = parse_sexpr(":unordered AND\n(AND (P a) (Q a))")
    h = parse_sexpr(":unordered AND\nx\n(Q x)\n(P x)\n(AND (P x) (Q x))")
    L, _ = _embed(model, g, h)
    n = len(g)
    and_g = next(v.id for v in g if v.label == "AND")
    and_h = next(v.id for v in h if v.label == "AND")
    np.testing.assert_allclose(L.data[0, and_g], L.data[0, n + and_h], atol=1e-12)


def test_dag_lstm_gradcheck(model):
    g = parse_sexpr(":unordered AND\n(AND (P a b) (F a))")
    enc = encode_pair(g, g, np.random.default_rng(0))
    plan = lstm_plan(enc.edges, enc.layers, 4)
    p = init_params(AmnConfig(seed=3))
    w = ad.Tensor(np.random.default_rng(1).normal(size=(1, enc.n, 32)))
    fn = lambda: ad.sum_(dag_lstm(p, "label", enc.label_tokens[None], plan, 4) * w)
    inputs = [p["label.emb"], p["label.W"], p["label.b"], p["label.U"]]
    assert ad.gradcheck(fn, inputs, max_entries=40) < 1e-4


def test_candidate_set_listing_pair(model, atom, solar):
    L, _ = _embed(model, atom, solar)
    cands = set(model.candidate_pairs(L.data[0], len(atom)))
    assert (A(7), S(15)) in cands
    # a GREATER over TEMPERATURE has a different label structure below it
    assert (A(7), S(16)) not in cands
    assert (A(7), S(14)) not in cands
    assert (A(1), S(8)) in cands  # entities share a token and have no args
    wide = AMN(AmnConfig(seed=1, epsilon=np.inf), model.params)
    assert len(wide.candidate_pairs(L.data[0], len(atom))) == len(atom) * len(solar)


def test_signatures_unit_norm(model, atom, solar):
    _, Sg = _embed(model, atom, solar, views=3)
    np.testing.assert_allclose(np.linalg.norm(Sg.data, axis=-1), 1.0, atol=1e-9)
    # distinct entities are distinguishable
    assert Sg.data[0, A(1)] @ Sg.data[0, A(2)] < 1 - 1e-6


def test_encoder_permutation_equivariant(model):
    rng = np.random.default_rng(0)
    h = rng.normal(size=(1, 5, 128))
    perm = rng.permutation(5)
    with ad.no_grad():
        out = model.encode(ad.Tensor(h)).data
        out_p = model.encode(ad.Tensor(h[:, perm])).data
    np.testing.assert_allclose(out[:, perm], out_p, atol=1e-10)
    with ad.no_grad():
        single = model.encode(ad.Tensor(h[:, :1])).data
    assert np.isfinite(single).all()


def test_empty_candidates_give_empty_mapping(model):
    m = AMN(AmnConfig(seed=1, epsilon=-1.0), model.params)
    g = parse_sexpr("(P a b)")
    out = m.forward(g, g, np.random.default_rng(0))
    assert len(out) == 0 and out.inferences == frozenset()


def test_forward_deterministic(model, solar, atom):
    a = model.forward(solar, atom, np.random.default_rng(4))
    b = model.forward(solar, atom, np.random.default_rng(4))
    assert a == b
    assert not a.inferences & a.base_nodes


def test_renaming_invariance(model, solar, atom):
    names = {"MASS": "HEFT", "GREATER": "EXCEEDS", "ATTRACTS": "PULLS", "sun": "star", "nucleus": "core"}
    a = model.forward(solar, atom, np.random.default_rng(9))
    b = model.forward(relabel(solar, names), relabel(atom, names), np.random.default_rng(9))
    assert a == b


def test_sem_pick():
    A_ = Mapping(frozenset({(0, 0), (1, 1)}))
    B_ = Mapping(frozenset({(0, 1)}))
    assert sem_pick([A_, A_, B_]) == 0
    assert sem_pick([B_, A_, A_]) == 1
    assert sem_pick([B_]) == 0
    assert jaccard(frozenset(), frozenset()) == 1.0


def test_sem_select_single_run(model, solar, atom):
    m = sem_select(solar, atom, model, 1, np.random.default_rng(2))
    assert isinstance(m, Mapping)
    with pytest.raises(ValueError):
        sem_select(solar, atom, model, 0, np.random.default_rng(2))


def test_perfect_logits_zero_loss(model):
    vals = ad.Tensor(np.array([[[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]]]))
    mask = np.array([[True, True, True], [False, True, True]])
    loss = model._ce(vals, np.array([0, 2]), mask, 1)
    assert loss.item() < 1e-6


def test_lambda_zero_gives_no_ci_gradients():
    m = AMN(AmnConfig(seed=0, lam=0.0, views=2))
    ex = generate(1, desk_params(), seed=4)[0]
    tr = Trainer(m)
    lc, li, _ = m.loss(ex.base, ex.target, ex.gold_m, ex.gold_ci, [np.random.default_rng(0)] * 2)
    ad.backward(lc + li * 0.0)
    for name in ("ci.Wq", "ci.Wk", "ci.W0", "ci.end"):
        key = name if name in m.params else "ci.v.W0"
        g = m.params[key].grad
        assert g is None or not g.any()
    tr.opt.zero_grad()


def test_full_pipeline_gradcheck():
    gB = parse_sexpr("(P a b)")
    gT = parse_sexpr("(P x y)")
    m = AMN(AmnConfig(seed=2, views=2))
    gold = {(0, 0), (1, 1), (2, 2)}

    def rngs():
        # fresh streams so every evaluation sees the same label draws
        return [np.random.default_rng(5), np.random.default_rng(6)]

    def fn():
        lc, _, _ = m.loss(gB, gT, gold, [], rngs())
        _, li, _ = m.loss(gB, gT, {(0, 0), (1, 1)}, [2], rngs())
        return lc + li * 0.1

    params = list(m.params.values())
    err = ad.gradcheck(fn, params, max_entries=4, rng=np.random.default_rng(0), per_input=False)
    assert err < 1e-4


def test_overfit_single_example():
    # a fixed label draw removes the augmentation noise, so the loss must collapse
    ex = generate(1, desk_params(), seed=8)[0]
    m = AMN(AmnConfig(seed=0, views=1))
    opt = ad.Adam(m.params.values(), 3e-3)
    losses = []
    for _ in range(100):
        lc, li, _ = m.loss(ex.base, ex.target, ex.gold_m, ex.gold_ci, [np.random.default_rng(3)])
        total = lc + li * 0.1
        ad.backward(total)
        opt.step()
        losses.append(total.item())
    assert np.mean(losses[-5:]) < 0.1 * losses[0]


def test_checkpoint_round_trip(tmp_path, model, solar, atom):
    path = tmp_path / "m.bin"
    model.save(path)
    back = AMN.load(path)
    for k, t in model.params.items():
        assert back.params[k].data.tobytes() == t.data.tobytes()
    assert back.forward(solar, atom, np.random.default_rng(1)) == model.forward(solar, atom, np.random.default_rng(1))


def test_ablation_configs(solar, atom):
    m = AMN(AmnConfig(seed=0, ablate=["no-sig-graph"]))
    assert not any(k.startswith("sig.") for k in m.params)
    m.forward(solar, atom, np.random.default_rng(0))
    m2 = AMN(AmnConfig(seed=0, ablate=["no-sig-norm"]))
    _, Sg = _embed(m2, solar, atom)
    assert not np.allclose(np.linalg.norm(Sg.data, axis=-1), 1.0)
    with pytest.raises(ValueError):
        AmnConfig(ablate=["nothing"])


def test_gold_orders(solar, atom):
    gold = {(S(s), A(a)) for a, s in FULL}
    ci = candidate_inferences(solar, gold)
    top = AMN(AmnConfig(gold_order="top_down"))
    seq, ci_seq = top.gold_sequence(solar, gold), top.gold_ci_sequence(solar, ci)
    assert set(seq) == gold and set(ci_seq) == ci
    for order in (seq, [(v, None) for v in ci_seq]):
        layers = [solar.layer_of(b) for b, _ in order]
        assert layers == sorted(layers, reverse=True)
    assert solar.layer_of(ci_seq[0]) > 0 and solar.layer_of(seq[-1][0]) == 0
    flat = AMN(AmnConfig(gold_order="base_id"))
    assert flat.gold_sequence(solar, gold) == sorted(gold)
    assert flat.gold_ci_sequence(solar, ci) == sorted(ci)

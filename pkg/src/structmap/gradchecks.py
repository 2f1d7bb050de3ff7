"""Named finite-difference checks for the tensor primitives and the model.

Each check builds a small random instance, compares analytic gradients
with central differences and returns the relative error. The registry is
shared by the ``gradcheck`` command and the test suite.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck, parameter

TOLERANCE = 1e-4


def _p(rng: np.random.Generator, *shape: int, positive: bool = False) -> Tensor:
    x = rng.normal(size=shape)
    return parameter(np.abs(x) + 0.5 if positive else x)


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    # a random projection makes every output entry matter
    return ad.sum_(out * Tensor(rng.normal(size=out.shape)))


def _unary(op: Callable[[Tensor], Tensor], positive: bool = False) -> Callable[[np.random.Generator], float]:
    def check(rng: np.random.Generator) -> float:
        x = _p(rng, 3, 4, positive=positive)
        w = rng.normal(size=x.shape)
        return gradcheck(lambda: ad.sum_(op(x) * Tensor(w)), [x])
    return check


def _binary(op: Callable[[Tensor, Tensor], Tensor], positive: bool = False) -> Callable[[np.random.Generator], float]:
    def check(rng: np.random.Generator) -> float:
        # the second operand broadcasts along the first axis
        a, b = _p(rng, 3, 4), _p(rng, 1, 4, positive=positive)
        w = rng.normal(size=(3, 4))
        return gradcheck(lambda: ad.sum_(op(a, b) * Tensor(w)), [a, b])
    return check


def _reduction(op) -> Callable[[np.random.Generator], float]:
    def check(rng: np.random.Generator) -> float:
        x = _p(rng, 3, 5)
        mask = np.array([[1, 1, 0, 1, 0], [0, 1, 1, 1, 1], [1, 0, 0, 0, 0]], dtype=bool)
        w = rng.normal(size=3)
        return gradcheck(lambda: ad.sum_(op(x, mask) * Tensor(w)), [x])
    return check


def _shapes(rng: np.random.Generator) -> float:
    x = _p(rng, 2, 3, 4)
    w = rng.normal(size=(4, 1, 3, 2))

    def fn():
        y = ad.swapaxes(ad.reshape(x, (2, 12)).T, 0, 1)       # (2, 12)
        y = ad.reshape(y, (2, 3, 4))
        y = ad.broadcast_to(ad.expand_dims(y, 0), (4, 2, 3, 4))
        return ad.sum_(ad.swapaxes(y, 1, 3) * Tensor(w))
    return gradcheck(fn, [x])


def _gather(rng: np.random.Generator) -> float:
    x = _p(rng, 5, 3)
    idx = np.array([4, 0, 0, 2])
    seg = np.array([1, 0, 1, 2, 1])

    def fn():
        a = ad.take(x, idx, axis=0)
        b = ad.segment_sum(x, seg, 3)
        c = ad.slice_(x, (slice(1, 4), [0, 2]))
        d = ad.slice_(x, (np.array([0, 0, 3]), 1))
        return _weighted(a, np.random.default_rng(1)) + _weighted(b, np.random.default_rng(2)) \
            + _weighted(c, np.random.default_rng(3)) + _weighted(d, np.random.default_rng(4))
    return gradcheck(fn, [x])


def _join(rng: np.random.Generator) -> float:
    a, b = _p(rng, 2, 3), _p(rng, 2, 3)
    w1, w2 = rng.normal(size=(2, 6)), rng.normal(size=(2, 2, 3))
    return gradcheck(lambda: ad.sum_(ad.concat([a, b], axis=1) * Tensor(w1))
                     + ad.sum_(ad.stack([a, b], axis=1) * Tensor(w2)), [a, b])


def _matmul(rng: np.random.Generator) -> float:
    a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    w = rng.normal(size=(2, 3, 5))
    return gradcheck(lambda: ad.sum_(ad.matmul(a, b) * Tensor(w)), [a, b])


def _linear(rng: np.random.Generator) -> float:
    x, W, b = _p(rng, 3, 4), _p(rng, 5, 4), _p(rng, 5)
    v = _p(rng, 4)
    w = rng.normal(size=(3, 5))
    return gradcheck(lambda: ad.sum_(ad.linear(x, W, b) * Tensor(w)) + ad.dot(v, v), [x, W, b, v])


def _softmaxes(rng: np.random.Generator) -> float:
    x = _p(rng, 3, 4)
    mask = np.array([[1, 1, 1, 1], [0, 1, 0, 1], [1, 0, 0, 0]], dtype=bool)
    w = rng.normal(size=(3, 4))

    def fn():
        s = ad.softmax(x, axis=-1, mask=mask)
        ls = ad.log_softmax(x, axis=-1, mask=mask)
        return ad.sum_(s * Tensor(w)) + ad.sum_(ad.where(mask, ls, 0.0) * Tensor(w))
    return gradcheck(fn, [x])


def _cross_entropy(rng: np.random.Generator) -> float:
    x = _p(rng, 3, 4)
    mask = np.array([[1, 1, 1, 1], [0, 1, 0, 1], [1, 1, 0, 0]], dtype=bool)
    return gradcheck(lambda: ad.cross_entropy(x, np.array([2, 3, 0]), mask=mask), [x])


def _norms(rng: np.random.Generator) -> float:
    x, g, b = _p(rng, 3, 6), _p(rng, 6), _p(rng, 6)
    w = rng.normal(size=(3, 6))
    return gradcheck(lambda: ad.sum_((ad.layer_norm(x, g, b) + ad.l2_normalize(x)) * Tensor(w)), [x, g, b])


PRIMITIVES: dict[str, Callable[[np.random.Generator], float]] = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _binary(ad.div, positive=True),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, positive=True),
    "sigmoid": _unary(ad.sigmoid),
    "tanh": _unary(ad.tanh),
    "elu": _unary(ad.elu),
    "shape-ops": _shapes,
    "gather-scatter": _gather,
    "concat-stack": _join,
    "sum-mean": _reduction(lambda x, m: ad.sum_(ad.where(m, x, 0.0), axis=1) + ad.mean(x, axis=1)),
    "max-min": _reduction(lambda x, m: ad.max_(x, axis=1, mask=m) - ad.min_(x, axis=1, mask=m)),
    "masked-mean": _reduction(lambda x, m: ad.masked_mean(x, m, axis=1)),
    "matmul": _matmul,
    "linear-dot": _linear,
    "softmax": _softmaxes,
    "cross-entropy": _cross_entropy,
    "norms": _norms,
}


# --------------------------------------------------------------------------
# model components


def _model(seed: int = 2, **kw):
    from .amn import AMN, AmnConfig
    return AMN(AmnConfig(seed=seed, **kw))


def _small_pair():
    from .ir import parse_sexpr
    g = parse_sexpr(":unordered AND\n(AND (P a b) (F a))\n(Q (F a) b)")
    h = parse_sexpr(":unordered AND\n(AND (F x) (P x y))\n(Q (F x) y)")
    return g, h


def _dag_lstm(rng: np.random.Generator) -> float:
    from .amn import dag_lstm, lstm_plan
    from .encoding import encode_pair
    m = _model()
    g, h = _small_pair()
    enc = encode_pair(g, h, np.random.default_rng(0))
    n_types = m.cfg.max_arity + 1
    plan = lstm_plan(enc.edges, enc.layers, n_types)
    w = Tensor(rng.normal(size=(1, enc.n, m.cfg.node_dim)))
    p = m.params
    inputs = [p["label.emb"], p["label.W"], p["label.b"], p["label.U"]]
    return gradcheck(lambda: ad.sum_(dag_lstm(p, "label", enc.label_tokens[None], plan, n_types) * w),
                     inputs, max_entries=24, rng=rng)


def _encoder(rng: np.random.Generator) -> float:
    m = _model()
    x = parameter(rng.normal(size=(2, 4, m.cfg.model_dim)))
    w = Tensor(rng.normal(size=x.shape))
    inputs = [x] + [t for k, t in m.params.items() if k.startswith("enc")]
    return gradcheck(lambda: ad.sum_(m.encode(x) * w), inputs, max_entries=6, rng=rng)


def _decoder(rng: np.random.Generator) -> float:
    from .amn import decoder_values
    m = _model()
    cfg = m.cfg
    V, O, T, J, D, d = 1, 4, 3, 3, cfg.model_dim, cfg.node_dim
    E = parameter(rng.normal(size=(V, O - 1, D)))
    opt_h = parameter(rng.normal(size=(V, O, D)))
    unit = lambda *s: parameter(ad.l2_normalize(Tensor(rng.normal(size=s))).data)
    opt_sb, opt_st = unit(V, O, d), unit(V, O, d)
    d_h = parameter(rng.normal(size=(V, T, J, D)))
    d_sb, d_st = unit(V, J, d), unit(V, J, d)
    d_mask = np.tril(np.ones((T, J), dtype=bool))
    w = Tensor(rng.normal(size=(V, T, O)))
    inputs = [E, opt_h, opt_sb, opt_st, d_h, d_sb, d_st] + [
        t for k, t in m.params.items() if k.startswith(("dec", "ptr."))]
    return gradcheck(lambda: ad.sum_(decoder_values(m.params, cfg, E, opt_h, opt_sb, opt_st, d_h, d_sb, d_st, d_mask) * w),
                     inputs, max_entries=6, rng=rng)


def _end_to_end(rng: np.random.Generator) -> float:
    from .ir import parse_sexpr
    m = _model(views=2)
    gB, gT = parse_sexpr("(P a b)"), parse_sexpr("(P x y)")

    def views():
        # fresh streams so every evaluation sees the same label draws
        return [np.random.default_rng(5), np.random.default_rng(6)]

    def fn():
        lc, _, _ = m.loss(gB, gT, {(0, 0), (1, 1), (2, 2)}, (), views())
        _, li, _ = m.loss(gB, gT, {(0, 0), (1, 1)}, {2}, views())
        return lc + li * m.cfg.lam

    return gradcheck(fn, list(m.params.values()), max_entries=4, rng=rng, per_input=False)


MODEL: dict[str, Callable[[np.random.Generator], float]] = {
    "dag-lstm": _dag_lstm,
    "encoder": _encoder,
    "decoder-scores": _decoder,
    "end-to-end-loss": _end_to_end,
}


def run_all(seed: int = 0, include_model: bool = True) -> dict[str, float]:
    """Relative error of every registered check."""
    checks = {**PRIMITIVES, **(MODEL if include_model else {})}
    return {name: check(np.random.default_rng([seed, i])) for i, (name, check) in enumerate(checks.items())}

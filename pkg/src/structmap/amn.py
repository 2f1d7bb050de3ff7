"""Analogical matching network.

Pipeline: label and signature graphs, one DAG LSTM for each, unit-norm
signatures, candidate correspondences from equal label-structure
embeddings, a Transformer encoder over the candidates, a pointer-style
decoder that selects correspondences, and a second pointer over base-node
signatures that selects candidate inferences.

Training feeds one example as a batch of several independent re-encodings
("views"); teacher forcing lets every decoding step of every view be
evaluated in one batched pass.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import autodiff as ad
from .autodiff import Tensor
from .encoding import (
    ENTITY_POOL, LABEL_POOL, EncodedPair, encode_pair, label_vocabulary,
    signature_vocabulary, structure_arrays,
)
from .ir import Mapping, RelGraph
from .smt import structural_score

log = logging.getLogger(__name__)

Pair = tuple[int, int]
ABLATIONS = ("no-sig-norm", "no-sig-graph")


@dataclass
class AmnConfig:
    node_dim: int = 32
    max_arity: int = 3
    label_pool: int = LABEL_POOL
    entity_pool: int = ENTITY_POOL
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 2
    score_hidden: int = 64
    epsilon: float = 1e-5
    lam: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    views: int = 8
    gold_order: str = "base_id"
    gold_mass: bool = False
    ablate: list[str] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self) -> None:
        for a in self.ablate:
            if a not in ABLATIONS:
                raise ValueError(f"unknown ablation {a!r}; choose from {ABLATIONS}")
        if self.gold_order not in ("base_id", "top_down"):
            raise ValueError(f"unknown gold order {self.gold_order!r}")
        if self.views < 1:
            raise ValueError("views must be >= 1")

    @property
    def model_dim(self) -> int:
        return 4 * self.node_dim

    @property
    def sig_norm(self) -> bool:
        return "no-sig-norm" not in self.ablate

    @property
    def sig_graph(self) -> bool:
        return "no-sig-graph" not in self.ablate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AmnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "AmnConfig":
        path = Path(path)
        text = path.read_text()
        d = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        return cls.from_dict(d.get("model", d))


# --------------------------------------------------------------------------
# parameters


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    k = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def init_params(cfg: AmnConfig, rng: np.random.Generator | None = None) -> dict[str, Tensor]:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    d, D, h = cfg.node_dim, cfg.model_dim, cfg.score_hidden
    n_edge = cfg.max_arity + 1
    shapes: dict[str, tuple[tuple[int, ...], int]] = {}

    def add(name: str, shape: tuple[int, ...], fan_in: int | None = None) -> None:
        shapes[name] = (shape, fan_in if fan_in is not None else shape[-1])

    lstms = [("label", len(label_vocabulary(cfg.max_arity, cfg.label_pool)))]
    if cfg.sig_graph:
        lstms.append(("sig", len(signature_vocabulary(cfg.max_arity, cfg.entity_pool))))
    for name, vocab in lstms:
        add(f"{name}.emb", (vocab, d), d)
        add(f"{name}.W", (4 * d, d))
        add(f"{name}.b", (4 * d,), d)
        add(f"{name}.U", (d, n_edge * 4 * d), d)

    def ffn(prefix: str, sizes: Sequence[int]) -> None:
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            add(f"{prefix}.W{i}", (b, a))
            add(f"{prefix}.b{i}", (b,), a)

    def mha(prefix: str) -> None:
        for m in "qkvo":
            add(f"{prefix}.W{m}", (D, D))

    def ln(prefix: str) -> None:
        shapes[f"{prefix}.g"] = ((D,), 0)
        shapes[f"{prefix}.b"] = ((D,), -1)

    for i in range(cfg.layers):
        mha(f"enc{i}.self")
        ln(f"enc{i}.ln1")
        ffn(f"enc{i}.ffn", (D, cfg.ffn_mult * D, D))
        ln(f"enc{i}.ln2")
        mha(f"dec{i}.self")
        ln(f"dec{i}.ln1")
        mha(f"dec{i}.cross")
        ln(f"dec{i}.ln2")
        ffn(f"dec{i}.ffn", (D, cfg.ffn_mult * D, D))
        ln(f"dec{i}.ln3")
    add("ptr.Wq", (D, D))
    add("ptr.Wk", (D, D))
    ffn("ptr.pi", (3, h, h, 1))
    ffn("ptr.v", (3, h, h, 1))
    for tok in ("start", "end"):
        add(f"{tok}.h", (D,), D)
        add(f"{tok}.sb", (d,), d)
        add(f"{tok}.st", (d,), d)
    add("ci.Wq", (d, d))
    add("ci.Wk", (d, d))
    ffn("ci.v", (3, h, h, 1))
    add("ci.end", (d,), d)

    params = {}
    for name, (shape, fan_in) in shapes.items():
        if fan_in == 0:
            data = np.ones(shape)
        elif fan_in == -1:
            data = np.zeros(shape)
        else:
            data = _uniform(rng, shape, fan_in)
        params[name] = ad.parameter(data, name)
    return params


# --------------------------------------------------------------------------
# building blocks


def _ffn(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    i = 0
    while f"{prefix}.W{i + 1}" in p:
        x = ad.elu(ad.linear(x, p[f"{prefix}.W{i}"], p[f"{prefix}.b{i}"]))
        i += 1
    return ad.linear(x, p[f"{prefix}.W{i}"], p[f"{prefix}.b{i}"])


def _ln(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, dm = x.shape
    return ad.swapaxes(ad.reshape(x, (*lead, n, heads, dm // heads)), -2, -3)


def mha(p: dict[str, Tensor], prefix: str, q: Tensor, kv: Tensor, heads: int, key_mask=None) -> Tensor:
    """Multi-head attention of every row of ``q`` over the rows of ``kv``.

    ``key_mask`` (broadcastable to ``kv``'s leading shape plus the key axis)
    hides keys; a query with no visible key gets a zero update.
    """
    Q = _split_heads(ad.matmul(q, p[f"{prefix}.Wq"].T), heads)
    K = _split_heads(ad.matmul(kv, p[f"{prefix}.Wk"].T), heads)
    V = _split_heads(ad.matmul(kv, p[f"{prefix}.Wv"].T), heads)
    scores = ad.matmul(Q, K.T) * (1.0 / math.sqrt(Q.shape[-1]))
    mask = None
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        mask = km[..., None, None, :]
    att = ad.softmax(scores, axis=-1, mask=mask)
    out = ad.swapaxes(ad.matmul(att, V), -2, -3)
    *lead, n, _, _ = out.shape
    out = ad.reshape(out, (*lead, n, q.shape[-1]))
    return ad.matmul(out, p[f"{prefix}.Wo"].T)


@dataclass
class _LstmPlan:
    order: np.ndarray
    inverse: np.ndarray
    layers: list[np.ndarray]
    steps: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None]


def lstm_plan(edges: np.ndarray, layers: list[np.ndarray], n_edge_types: int) -> _LstmPlan:
    """Precompute gather indices for layer-by-layer DAG LSTM evaluation."""
    pos = np.full(sum(len(l) for l in layers), -1, dtype=np.intp)
    steps = []
    done = 0
    for layer in layers:
        local = {int(v): i for i, v in enumerate(layer)}
        rows = edges[np.isin(edges[:, 0], layer)] if len(edges) else edges
        if len(rows):
            parent_local = np.array([local[int(v)] for v in rows[:, 0]], dtype=np.intp)
            child_pos = pos[rows[:, 1]]
            assert (child_pos >= 0).all()
            select = np.arange(len(rows)) * n_edge_types + rows[:, 2]
            steps.append((parent_local, child_pos, select))
        else:
            steps.append(None)
        pos[layer] = done + np.arange(len(layer))
        done += len(layer)
    order = np.concatenate(layers) if layers else np.zeros(0, dtype=np.intp)
    return _LstmPlan(order, pos, layers, steps)


def dag_lstm(p: dict[str, Tensor], prefix: str, tokens: np.ndarray, plan: _LstmPlan, n_edge_types: int) -> Tensor:
    """Node embeddings ``(views, n, d)`` for token arrays ``(views, n)``.

    Nodes of one topological layer are updated together; each argument edge
    contributes through the matrix of its edge type and has its own forget gate.
    """
    emb, W, b, U = p[f"{prefix}.emb"], p[f"{prefix}.W"], p[f"{prefix}.b"], p[f"{prefix}.U"]
    d = emb.shape[1]
    views = tokens.shape[0]
    X = ad.take(emb, tokens, axis=0)
    XW = ad.linear(X, W, b)
    H = C = None
    for layer, step in zip(plan.layers, plan.steps):
        xw = ad.take(XW, layer, axis=1)
        iou = xw[..., :3 * d]
        fc = None
        if step is not None:
            parent_local, child_pos, select = step
            hch = ad.take(H, child_pos, axis=1)
            cch = ad.take(C, child_pos, axis=1)
            uh = ad.matmul(hch, U)
            uh = ad.take(ad.reshape(uh, (views, len(child_pos) * n_edge_types, 4 * d)), select, axis=1)
            iou = iou + ad.segment_sum(uh[..., :3 * d], parent_local, len(layer), axis=1)
            f = ad.sigmoid(ad.take(xw[..., 3 * d:], parent_local, axis=1) + uh[..., 3 * d:])
            fc = ad.segment_sum(f * cch, parent_local, len(layer), axis=1)
        i = ad.sigmoid(iou[..., :d])
        o = ad.sigmoid(iou[..., d:2 * d])
        c = i * ad.tanh(iou[..., 2 * d:])
        if fc is not None:
            c = c + fc
        h = o * ad.tanh(c)
        H = h if H is None else ad.concat([H, h], axis=1)
        C = c if C is None else ad.concat([C, c], axis=1)
    return ad.take(H, plan.inverse, axis=1)


# --------------------------------------------------------------------------
# pointer scoring


def _pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """``[max; min; mean]`` over the last axis of ``x`` restricted to ``mask``."""
    return ad.stack([ad.max_(x, -1, mask), ad.min_(x, -1, mask), ad.masked_mean(x, mask, -1)], axis=-1)


def _squeeze_last(x: Tensor) -> Tensor:
    return ad.reshape(x, x.shape[:-1])


def decoder_values(p: dict[str, Tensor], cfg: AmnConfig, E: Tensor, opt_h: Tensor, opt_sb: Tensor, opt_st: Tensor,
                   d_h: Tensor, d_sb: Tensor, d_st: Tensor, d_mask: np.ndarray) -> Tensor:
    """Option values ``(views, steps, options)``.

    ``d_h`` is ``(views, steps, J, D)``: at step ``t`` the selected set is the
    rows with ``d_mask[t]`` true. Options and their signatures are shared by
    all steps; ``E`` is the encoded candidate set ``(views, m, D)``.
    """
    x = d_h
    Eb = ad.expand_dims(E, 1)
    for i in range(cfg.layers):
        x = _ln(p, f"dec{i}.ln1", x + mha(p, f"dec{i}.self", x, x, cfg.heads, d_mask))
        x = _ln(p, f"dec{i}.ln2", x + mha(p, f"dec{i}.cross", x, Eb, cfg.heads))
        x = _ln(p, f"dec{i}.ln3", x + _ffn(p, f"dec{i}.ffn", x))
    q = ad.matmul(x, p["ptr.Wq"].T)                       # (V, T, J, D)
    k = ad.expand_dims(ad.matmul(opt_h, p["ptr.Wk"].T), 1)  # (V, 1, O, D)
    alpha = ad.matmul(k, q.T) * (1.0 / math.sqrt(cfg.model_dim))  # (V, T, O, J)
    sbdot = ad.matmul(ad.expand_dims(opt_sb, 1), ad.expand_dims(d_sb.T, 1))  # (V, 1, O, J)
    stdot = ad.matmul(ad.expand_dims(opt_st, 1), ad.expand_dims(d_st.T, 1))
    shape = alpha.shape
    feats = ad.stack([ad.tanh(alpha), ad.broadcast_to(sbdot, shape), ad.broadcast_to(stdot, shape)], axis=-1)
    pi = _squeeze_last(_ffn(p, "ptr.pi", feats))           # (V, T, O, J)
    mask = d_mask[:, None, :]                              # (T, 1, J)
    return _squeeze_last(_ffn(p, "ptr.v", _pool(pi, mask)))


def ci_values(p: dict[str, Tensor], cfg: AmnConfig, opt_s: Tensor, d_s: Tensor, d_mask: np.ndarray) -> Tensor:
    """Option values ``(views, steps, options)`` of the inference selector.

    ``opt_s`` is ``(views, O, d)`` (unmatched base signatures plus the END
    vector), ``d_s`` is ``(views, J, d)`` and ``d_mask[t]`` marks the rows of
    ``d_s`` visible at step ``t`` (matched nodes and earlier selections).
    """
    q = ad.matmul(d_s, p["ci.Wq"].T)
    k = ad.matmul(opt_s, p["ci.Wk"].T)
    alpha = ad.tanh(ad.matmul(k, q.T) * (1.0 / math.sqrt(cfg.node_dim)))  # (V, O, J)
    T = d_mask.shape[0]
    a = ad.broadcast_to(ad.expand_dims(alpha, 1), (alpha.shape[0], T, *alpha.shape[1:]))
    return _squeeze_last(_ffn(p, "ci.v", _pool(a, d_mask[:, None, :])))


# --------------------------------------------------------------------------
# model


@dataclass
class CorrTuple:
    base: int
    target: int
    h: np.ndarray
    s_b: np.ndarray
    s_t: np.ndarray


@dataclass
class StepStats:
    loss_corr: float
    loss_ci: float
    candidates: int
    gold: int
    skipped: int


class AMN:
    def __init__(self, cfg: AmnConfig | None = None, params: dict[str, Tensor] | None = None):
        self.cfg = cfg or AmnConfig()
        self.params = params if params is not None else init_params(self.cfg)
        self.n_edge = self.cfg.max_arity + 1

    # ---- embedding ------------------------------------------------------

    def encode_views(self, gB: RelGraph, gT: RelGraph, rngs: Sequence[np.random.Generator | None]) -> list[EncodedPair]:
        structure = structure_arrays(gB, gT, self.cfg.max_arity)
        return [encode_pair(gB, gT, r, max_arity=self.cfg.max_arity, label_pool=self.cfg.label_pool,
                            entity_pool=self.cfg.entity_pool, structure=structure) for r in rngs]

    def embed(self, encs: Sequence[EncodedPair]) -> tuple[Tensor, Tensor]:
        """Label-structure and (unit-norm) signature embeddings, ``(views, n, d)`` each."""
        e0 = encs[0]
        plan = lstm_plan(e0.edges, e0.layers, self.n_edge)
        L = dag_lstm(self.params, "label", np.stack([e.label_tokens for e in encs]), plan, self.n_edge)
        if self.cfg.sig_graph:
            S = dag_lstm(self.params, "sig", np.stack([e.signature_tokens for e in encs]), plan, self.n_edge)
        else:
            S = L
        if self.cfg.sig_norm:
            S = ad.l2_normalize(S)
        return L, S

    def candidate_pairs(self, L: np.ndarray, n_base: int) -> list[Pair]:
        """Pairs whose label-structure embeddings lie within epsilon, in (base, target) order."""
        lb, lt = L[:n_base], L[n_base:]
        if len(lb) == 0 or len(lt) == 0:
            return []
        dist = np.sqrt(((lb[:, None, :] - lt[None, :, :]) ** 2).sum(-1))
        b, t = np.nonzero(dist <= self.cfg.epsilon)
        return list(zip(b.tolist(), t.tolist()))

    def _tuples(self, L: Tensor, S: Tensor, pairs: list[Pair], n_base: int) -> tuple[Tensor, Tensor, Tensor]:
        bi = np.array([b for b, _ in pairs], dtype=np.intp)
        ti = np.array([n_base + t for _, t in pairs], dtype=np.intp)
        sb, st = ad.take(S, bi, axis=1), ad.take(S, ti, axis=1)
        h = ad.concat([ad.take(L, bi, axis=1), ad.take(L, ti, axis=1), sb, st], axis=-1)
        return h, sb, st

    def encode(self, h: Tensor) -> Tensor:
        for i in range(self.cfg.layers):
            h = _ln(self.params, f"enc{i}.ln1", h + mha(self.params, f"enc{i}.self", h, h, self.cfg.heads))
            h = _ln(self.params, f"enc{i}.ln2", h + _ffn(self.params, f"enc{i}.ffn", h))
        return h

    def _token(self, name: str, views: int) -> tuple[Tensor, Tensor, Tensor]:
        p = self.params

        def sig(x: Tensor) -> Tensor:
            return ad.l2_normalize(x) if self.cfg.sig_norm else x

        def rows(x: Tensor) -> Tensor:
            return ad.broadcast_to(ad.reshape(x, (1, 1, x.shape[0])), (views, 1, x.shape[0]))

        return rows(p[f"{name}.h"]), rows(sig(p[f"{name}.sb"])), rows(sig(p[f"{name}.st"]))

    def _options(self, E: Tensor, sb: Tensor, st: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        eh, esb, est = self._token("end", E.shape[0])
        return ad.concat([E, eh], 1), ad.concat([sb, esb], 1), ad.concat([st, est], 1)

    # ---- training -------------------------------------------------------

    def gold_sequence(self, gB: RelGraph, gold: Iterable[Pair]) -> list[Pair]:
        if self.cfg.gold_order == "base_id":
            return sorted(gold)
        return sorted(gold, key=lambda p: (-gB.layer_of(p[0]), p))

    def gold_ci_sequence(self, gB: RelGraph, gold_ci: Iterable[int]) -> list[int]:
        if self.cfg.gold_order == "base_id":
            return sorted(gold_ci)
        return sorted(gold_ci, key=lambda v: (-gB.layer_of(v), v))

    def loss(self, gB: RelGraph, gT: RelGraph, gold_m: Iterable[Pair], gold_ci: Iterable[int],
             rngs: Sequence[np.random.Generator | None]) -> tuple[Tensor, Tensor, StepStats]:
        cfg = self.cfg
        encs = self.encode_views(gB, gT, rngs)
        V, nB = len(encs), len(gB)
        L, S = self.embed(encs)
        pairs = self.candidate_pairs(L.data[0], nB)
        index = {p: i for i, p in enumerate(pairs)}
        gold = self.gold_sequence(gB, gold_m)
        kept = [g for g in gold if g in index]
        skipped = len(gold) - len(kept)
        if skipped:
            log.debug("%d gold correspondences missing from the candidate set", skipped)
        zero = Tensor(0.0)

        loss_corr = zero
        if pairs:
            h, sb, st = self._tuples(L, S, pairs, nB)
            E = self.encode(h)
            opt_h, opt_sb, opt_st = self._options(E, sb, st)
            m = len(pairs)
            K = len(kept)
            seq = np.array([index[g] for g in kept], dtype=np.intp)
            s_h, s_sb, s_st = self._token("start", V)
            d_h = ad.concat([s_h, ad.take(E, seq, 1)], 1)
            d_sb = ad.concat([s_sb, ad.take(sb, seq, 1)], 1)
            d_st = ad.concat([s_st, ad.take(st, seq, 1)], 1)
            T = K + 1
            d_mask = np.tril(np.ones((T, T), dtype=bool))
            d_h4 = ad.broadcast_to(ad.expand_dims(d_h, 1), (V, T, T, d_h.shape[-1]))
            vals = decoder_values(self.params, cfg, E, opt_h, opt_sb, opt_st, d_h4, d_sb, d_st, d_mask)
            opt_mask = np.ones((T, m + 1), dtype=bool)
            for t in range(1, T):
                opt_mask[t:, seq[t - 1]] = False
            target = np.append(seq, m)
            loss_corr = self._ce(vals, target, opt_mask, V)

        loss_ci = zero
        matched = sorted({b for b, _ in gold_m})
        out_nodes = [v for v in range(nB) if v not in set(matched)]
        if matched and out_nodes:
            ci_seq = self.gold_ci_sequence(gB, gold_ci)
            pos = {v: i for i, v in enumerate(out_nodes)}
            sel = np.array([pos[v] for v in ci_seq], dtype=np.intp)
            S_out = ad.take(S, np.array(out_nodes, dtype=np.intp), 1)
            end = self.params["ci.end"]
            opt_s = ad.concat([S_out, ad.broadcast_to(ad.reshape(end, (1, 1, end.shape[0])), (V, 1, end.shape[0]))], 1)
            d_s = ad.concat([ad.take(S, np.array(matched, dtype=np.intp), 1), ad.take(S_out, sel, 1)], 1)
            T = len(ci_seq) + 1
            d_mask = np.zeros((T, len(matched) + len(ci_seq)), dtype=bool)
            d_mask[:, :len(matched)] = True
            for t in range(1, T):
                d_mask[t:, len(matched) + t - 1] = True
            vals = ci_values(self.params, cfg, opt_s, d_s, d_mask)
            opt_mask = np.ones((T, len(out_nodes) + 1), dtype=bool)
            for t in range(1, T):
                opt_mask[t:, sel[t - 1]] = False
            loss_ci = self._ce(vals, np.append(sel, len(out_nodes)), opt_mask, V)

        stats = StepStats(loss_corr.item(), loss_ci.item(), len(pairs), len(gold), skipped)
        return loss_corr, loss_ci, stats

    def _ce(self, vals: Tensor, target: np.ndarray, opt_mask: np.ndarray, views: int) -> Tensor:
        """Summed over steps, averaged over views."""
        V = vals.shape[0]
        mask = np.broadcast_to(opt_mask, vals.shape)
        tgt = np.broadcast_to(target, vals.shape[:-1])
        if not self.cfg.gold_mass:
            return ad.cross_entropy(vals, tgt, mask) * (1.0 / views)
        # probability mass on every still-unselected gold option
        gold_opts = np.zeros(vals.shape[1:], dtype=bool)
        for t in range(len(target)):
            gold_opts[t, target[t:]] = True
        gold_opts &= opt_mask
        lp = ad.log_softmax(vals, -1, mask)
        massed = ad.sum_(ad.exp(ad.where(np.broadcast_to(gold_opts, vals.shape), lp, -1e300)), -1)
        return ad.sum_(ad.log(massed)) * (-1.0 / V)

    # ---- inference ------------------------------------------------------

    def decode(self, E: Tensor, sb: Tensor, st: Tensor, pairs: list[Pair]) -> list[Pair]:
        """Greedy decoding for one view; ``E``, ``sb``, ``st`` have a leading view axis of 1."""
        if not pairs:
            return []
        opt_h, opt_sb, opt_st = self._options(E, sb, st)
        s_h, s_sb, s_st = self._token("start", 1)
        m = len(pairs)
        chosen: list[int] = []
        avail = np.ones(m + 1, dtype=bool)
        for _ in range(m + 1):
            idx = np.array(chosen, dtype=np.intp)
            d_h = ad.concat([s_h, ad.take(E, idx, 1)], 1)
            d_sb = ad.concat([s_sb, ad.take(sb, idx, 1)], 1)
            d_st = ad.concat([s_st, ad.take(st, idx, 1)], 1)
            J = d_h.shape[1]
            vals = decoder_values(self.params, self.cfg, E, opt_h, opt_sb, opt_st,
                                  ad.expand_dims(d_h, 1), d_sb, d_st, np.ones((1, J), dtype=bool))
            v = np.where(avail, vals.data[0, 0], -np.inf)
            k = int(np.argmax(v))
            if k == m:
                break
            chosen.append(k)
            avail[k] = False
        return [pairs[k] for k in chosen]

    def select_inferences(self, S: Tensor, n_base: int, matched: Iterable[int]) -> list[int]:
        """Greedy inference selection for one view of signatures ``(1, n, d)``."""
        matched = sorted(set(matched))
        out_nodes = [v for v in range(n_base) if v not in set(matched)]
        if not out_nodes or not matched:
            return []
        end = self.params["ci.end"]
        S_out = ad.take(S, np.array(out_nodes, dtype=np.intp), 1)
        opt_s = ad.concat([S_out, ad.reshape(end, (1, 1, end.shape[0]))], 1)
        chosen: list[int] = []
        avail = np.ones(len(out_nodes) + 1, dtype=bool)
        for _ in range(len(out_nodes) + 1):
            d_s = ad.concat([ad.take(S, np.array(matched, dtype=np.intp), 1),
                             ad.take(S_out, np.array(chosen, dtype=np.intp), 1)], 1)
            vals = ci_values(self.params, self.cfg, opt_s, d_s, np.ones((1, d_s.shape[1]), dtype=bool))
            v = np.where(avail, vals.data[0, 0], -np.inf)
            k = int(np.argmax(v))
            if k == len(out_nodes):
                break
            chosen.append(k)
            avail[k] = False
        return sorted(out_nodes[k] for k in chosen)

    def forward_views(self, gB: RelGraph, gT: RelGraph, rngs: Sequence[np.random.Generator | None]) -> list[Mapping]:
        """One mapping per encoding rng; the views share one batched embedding pass."""
        with ad.no_grad():
            encs = self.encode_views(gB, gT, rngs)
            L, S = self.embed(encs)
            nB = len(gB)
            out = []
            for v in range(len(encs)):
                Lv, Sv = L[v:v + 1], S[v:v + 1]
                pairs = self.candidate_pairs(Lv.data[0], nB)
                corr: list[Pair] = []
                if pairs:
                    h, sb, st = self._tuples(Lv, Sv, pairs, nB)
                    corr = self.decode(self.encode(h), sb, st, pairs)
                ci = self.select_inferences(Sv, nB, [b for b, _ in corr])
                m = frozenset(corr)
                out.append(Mapping(m, frozenset(ci), structural_score(gB, gT, m)))
            return out

    def forward(self, gB: RelGraph, gT: RelGraph, rng: np.random.Generator | None = None) -> Mapping:
        return self.forward_views(gB, gT, [rng])[0]

    # ---- persistence ----------------------------------------------------

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"config": self.cfg.to_dict(), "format": "structmap-amn", "version": 1, **(extra or {})}
        ad.save_tensors(path, {k: t.data for k, t in self.params.items()}, meta)

    @classmethod
    def load(cls, path: str | Path) -> "AMN":
        arrays, meta = ad.load_tensors(path)
        if meta.get("format") != "structmap-amn":
            raise ValueError(f"{path}: not an AMN checkpoint")
        cfg = AmnConfig.from_dict(meta["config"])
        model = cls(cfg)
        missing = set(model.params) - set(arrays)
        if missing:
            raise ValueError(f"{path}: checkpoint lacks {sorted(missing)[:5]}")
        for k, t in model.params.items():
            if arrays[k].shape != t.shape:
                raise ValueError(f"{path}: {k} has shape {arrays[k].shape}, expected {t.shape}")
            t.data = arrays[k].copy()
        return model


def amn_forward(gB: RelGraph, gT: RelGraph, model: AMN, rng: np.random.Generator | None = None) -> Mapping:
    return model.forward(gB, gT, rng)


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """``n`` independent child generators drawn from ``rng``."""
    return [np.random.default_rng(int(x)) for x in rng.integers(0, 2**63, n)]


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def sem_pick(mappings: Sequence[Mapping]) -> int:
    """Index of the run with the largest summed Jaccard similarity to all runs (first on ties)."""
    sets = [m.correspondences for m in mappings]
    totals = [sum(jaccard(a, b) for b in sets) for a in sets]
    best = max(totals)
    return next(i for i, t in enumerate(totals) if t >= best - 1e-12)


def sem_select(gB: RelGraph, gT: RelGraph, model: AMN, r: int, rng: np.random.Generator) -> Mapping:
    if r < 1:
        raise ValueError("r must be >= 1")
    runs = model.forward_views(gB, gT, spawn(rng, r))
    return runs[sem_pick(runs)]


# --------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    steps: int = 0
    loss_corr: list[float] = field(default_factory=list)
    loss_ci: list[float] = field(default_factory=list)
    skipped: int = 0
    gold: int = 0

    @property
    def coverage(self) -> float:
        return 1.0 if self.gold == 0 else 1.0 - self.skipped / self.gold


class Trainer:
    def __init__(self, model: AMN, seed: int | None = None):
        self.model = model
        cfg = model.cfg
        self.opt = ad.Adam(model.params.values(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps_opt)
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.log = TrainLog()

    def step(self, example) -> StepStats:
        cfg = self.model.cfg
        rngs = spawn(self.rng, cfg.views)
        lc, li, stats = self.model.loss(example.base, example.target, example.gold_m, example.gold_ci, rngs)
        total = lc + li * cfg.lam if cfg.lam else lc
        ad.backward(total)
        self.opt.step()
        self.log.steps += 1
        self.log.loss_corr.append(stats.loss_corr)
        self.log.loss_ci.append(stats.loss_ci)
        self.log.skipped += stats.skipped
        self.log.gold += stats.gold
        return stats

    def fit(self, examples: Sequence, steps: int, callback=None) -> TrainLog:
        order: list[int] = []
        for k in range(steps):
            if not order:
                order = list(self.rng.permutation(len(examples)))
            stats = self.step(examples[order.pop()])
            if callback is not None:
                callback(k, stats)
        return self.log

"""Label graphs and signature graphs.

The label graph hides the vocabulary: every entity becomes one shared token
and every function or predicate symbol gets a generic label drawn at random
from a pool for its (arity, orderedness) class, consistently across base and
target. The signature graph keeps object identity instead: each entity gets
its own identifier and each expression is labelled only by its arity,
orderedness and whether it is a function.

:func:`encode_pair` turns both into flat integer arrays over the disjoint
union of base and target, which is what the DAG LSTMs consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .ir import ExprNode, NodeKind, RelGraph, RelGraphError

MAX_ARITY = 3
LABEL_POOL = 32
ENTITY_POOL = 64
ENTITY_TOKEN = "ENT"


class CapacityError(RelGraphError):
    """An example needs more generic labels or identifiers than the pools hold."""


def _class_key(node: ExprNode) -> tuple[int, bool]:
    return node.arity, node.ordered


def _class_name(arity: int, ordered: bool) -> str:
    return f"{arity}{'o' if ordered else 'u'}"


def generic_label(arity: int, ordered: bool, slot: int) -> str:
    return f"G{_class_name(arity, ordered)}-{slot:02d}"


def signature_token(node: ExprNode) -> str:
    head = "F" if node.kind is NodeKind.FUNCTION else "P"
    return f"{head}{_class_name(node.arity, node.ordered)}"


def entity_identifier(k: int) -> str:
    return f"ID{k:02d}"


def _classes(max_arity: int) -> list[tuple[int, bool]]:
    return [(a, o) for a in range(1, max_arity + 1) for o in (False, True)]


@lru_cache(maxsize=None)
def label_vocabulary(max_arity: int = MAX_ARITY, pool: int = LABEL_POOL) -> dict[str, int]:
    vocab = {ENTITY_TOKEN: 0}
    for a, o in _classes(max_arity):
        for s in range(pool):
            vocab[generic_label(a, o, s)] = len(vocab)
    return vocab


@lru_cache(maxsize=None)
def signature_vocabulary(max_arity: int = MAX_ARITY, pool: int = ENTITY_POOL) -> dict[str, int]:
    vocab = {entity_identifier(k): k for k in range(pool)}
    for a, o in _classes(max_arity):
        for head in "FP":
            vocab[f"{head}{_class_name(a, o)}"] = len(vocab)
    return vocab


@dataclass
class LabelAssignment:
    symbols: dict[str, str]
    pool_size: int = LABEL_POOL
    entity_token: str = ENTITY_TOKEN

    def to_dict(self) -> dict:
        return {"entity_token": self.entity_token, "pool_size": self.pool_size, "symbols": dict(sorted(self.symbols.items()))}


@dataclass
class SignatureAssignment:
    base_entities: dict[int, str]
    target_entities: dict[int, str]
    pool_size: int = ENTITY_POOL

    def to_dict(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "base_entities": {str(k): v for k, v in sorted(self.base_entities.items())},
            "target_entities": {str(k): v for k, v in sorted(self.target_entities.items())},
        }


def _check_arity(g: RelGraph, max_arity: int) -> None:
    for node in g:
        if node.arity > max_arity:
            raise CapacityError(f"node {node.id} ({node.label}) has arity {node.arity} > {max_arity}")


def _rename(g: RelGraph, name_of) -> RelGraph:
    return RelGraph([ExprNode(n.id, name_of(n), n.kind, n.ordered, n.args) for n in g])


def make_label_graphs(gB: RelGraph, gT: RelGraph, rng: np.random.Generator | None = None, *,
                      pool: int = LABEL_POOL, max_arity: int = MAX_ARITY) -> tuple[RelGraph, RelGraph, LabelAssignment]:
    """Replace symbols by generic labels shared between base and target.

    Symbols are taken in order of first appearance (base ids, then target
    ids) and each class draws its labels without replacement, so renaming
    the vocabulary never changes which generic label a node receives.
    Without ``rng`` the slots are handed out in order.
    """
    _check_arity(gB, max_arity)
    _check_arity(gT, max_arity)
    by_class: dict[tuple[int, bool], list[str]] = {}
    seen: set[str] = set()
    for node in (*gB, *gT):
        if node.is_entity or node.label in seen:
            continue
        seen.add(node.label)
        by_class.setdefault(_class_key(node), []).append(node.label)
    symbols: dict[str, str] = {}
    # iterate classes in a fixed order so the rng stream is consumed identically
    for key in _classes(max_arity):
        names = by_class.get(key, [])
        if len(names) > pool:
            raise CapacityError(f"{len(names)} symbols of class {_class_name(*key)} exceed the pool of {pool}")
        slots = rng.permutation(pool)[:len(names)] if rng is not None else range(len(names))
        for name, s in zip(names, slots):
            symbols[name] = generic_label(key[0], key[1], int(s))
    assignment = LabelAssignment(symbols, pool)

    def name_of(n: ExprNode) -> str:
        return ENTITY_TOKEN if n.is_entity else symbols[n.label]

    return _rename(gB, name_of), _rename(gT, name_of), assignment


def make_signature_graphs(gB: RelGraph, gT: RelGraph, rng: np.random.Generator | None = None, *,
                          pool: int = ENTITY_POOL) -> tuple[RelGraph, RelGraph, SignatureAssignment]:
    """Give each entity its own identifier; label expressions by class only.

    Identifiers go to base entities and then target entities in id order;
    with ``rng`` they are a random draw without replacement, otherwise
    ``ID00, ID01, ...``.
    """
    eb, et = gB.entities(), gT.entities()
    n = len(eb) + len(et)
    if n > pool:
        raise CapacityError(f"{n} entities exceed the identifier pool of {pool}")
    ids = rng.permutation(pool)[:n] if rng is not None else np.arange(n)
    base = {v: entity_identifier(int(k)) for v, k in zip(eb, ids[:len(eb)])}
    target = {v: entity_identifier(int(k)) for v, k in zip(et, ids[len(eb):])}

    def namer(table):
        return lambda node: table[node.id] if node.is_entity else signature_token(node)

    return _rename(gB, namer(base)), _rename(gT, namer(target)), SignatureAssignment(base, target, pool)


@dataclass
class EncodedPair:
    """Base and target as one disjoint graph; target node ``t`` sits at ``n_base + t``.

    ``edges`` rows are ``(parent, child, edge_type)``: ordered argument
    position ``k`` has type ``k`` and every unordered argument has type
    ``max_arity``. ``layers`` groups nodes by longest distance from a leaf.
    """

    n_base: int
    n_target: int
    label_tokens: np.ndarray
    signature_tokens: np.ndarray
    edges: np.ndarray
    layers: list[np.ndarray]
    labels: LabelAssignment
    signatures: SignatureAssignment
    label_graphs: tuple[RelGraph, RelGraph] = field(repr=False, default=None)
    signature_graphs: tuple[RelGraph, RelGraph] = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.n_base + self.n_target

    def debug_json(self) -> str:
        return json.dumps({"labels": self.labels.to_dict(), "signatures": self.signatures.to_dict()}, indent=2)


def structure_arrays(gB: RelGraph, gT: RelGraph, max_arity: int = MAX_ARITY) -> tuple[np.ndarray, list[np.ndarray]]:
    """Edge list and layer schedule of the disjoint union (independent of labels)."""
    rows = []
    depth: list[int] = []
    for off, g in ((0, gB), (len(gB), gT)):
        for node in g:
            for k, a in enumerate(node.args):
                rows.append((off + node.id, off + a, k if node.ordered else max_arity))
            depth.append(g.layer_of(node.id))
    edges = np.array(rows, dtype=np.intp).reshape(-1, 3)
    depth_arr = np.array(depth, dtype=np.intp)
    layers = [np.flatnonzero(depth_arr == d) for d in range(int(depth_arr.max(initial=-1)) + 1)]
    return edges, layers


def encode_pair(gB: RelGraph, gT: RelGraph, rng: np.random.Generator | None = None, *,
                randomize_entities: bool = True, max_arity: int = MAX_ARITY,
                label_pool: int = LABEL_POOL, entity_pool: int = ENTITY_POOL,
                structure: tuple[np.ndarray, list[np.ndarray]] | None = None) -> EncodedPair:
    lB, lT, la = make_label_graphs(gB, gT, rng, pool=label_pool, max_arity=max_arity)
    sB, sT, sa = make_signature_graphs(gB, gT, rng if randomize_entities else None, pool=entity_pool)
    lv = label_vocabulary(max_arity, label_pool)
    sv = signature_vocabulary(max_arity, entity_pool)
    label_tokens = np.array([lv[n.label] for n in (*lB, *lT)], dtype=np.intp)
    sig_tokens = np.array([sv[n.label] for n in (*sB, *sT)], dtype=np.intp)
    edges, layers = structure if structure is not None else structure_arrays(gB, gT, max_arity)
    return EncodedPair(len(gB), len(gT), label_tokens, sig_tokens, edges, layers, la, sa, (lB, lT), (sB, sT))

"""Synthetic analogy generator.

An example is made from a set of shared random DAGs ``C``. Structure is grown
on top of one copy of ``C`` to form the base and, independently, on top of a
second copy to form the target. The copies of each ``C`` node form the gold
correspondences; base nodes above ``C`` (and everything below them that is
not part of ``C``) are the gold candidate inferences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .ir import GraphBuilder, NodeKind, RelGraph, graph_from_dict, graph_to_dict

FORMAT_NAME = "structmap-analogies"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class GenParams:
    min_layers: int = 2
    max_layers: int = 7
    max_arity: int = 3
    # Calibrated so the mean example size tracks 26.9 expressions /
    # 14.3 entities / 26.8 correspondences per base.
    nodes_per_layer: tuple[int, int] = (1, 3)
    shared_dags: tuple[int, int] = (1, 4)
    entities_per_dag: tuple[int, int] = (2, 6)
    extension_layers: tuple[int, int] = (3, 6)
    extension_entities: tuple[int, int] = (2, 8)
    vocab_per_class: int = 10
    p_function: float = 0.5
    p_ordered: float = 0.5
    max_correspondences: int | None = None
    max_tries: int = 1000

    def __post_init__(self) -> None:
        self.nodes_per_layer = tuple(self.nodes_per_layer)
        self.shared_dags = tuple(self.shared_dags)
        self.entities_per_dag = tuple(self.entities_per_dag)
        self.extension_layers = tuple(self.extension_layers)
        self.extension_entities = tuple(self.extension_entities)
        if not 2 <= self.min_layers <= self.max_layers:
            raise ValueError("need 2 <= min_layers <= max_layers")
        if self.max_arity < 1:
            raise ValueError("max_arity must be >= 1")
        for name in ("nodes_per_layer", "shared_dags", "entities_per_dag", "extension_layers", "extension_entities"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"bad range for {name}: {(lo, hi)}")
        if self.nodes_per_layer[0] < 1 or self.shared_dags[0] < 1 or self.entities_per_dag[0] < 1:
            raise ValueError("nodes_per_layer, shared_dags and entities_per_dag need a lower bound >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def desk_params(**overrides) -> GenParams:
    """Small examples for laptop-scale training (at most 4 layers, 12 correspondences)."""
    base = dict(
        min_layers=2,
        max_layers=4,
        nodes_per_layer=(1, 3),
        shared_dags=(1, 2),
        entities_per_dag=(1, 3),
        extension_layers=(1, 2),
        extension_entities=(0, 2),
        max_correspondences=12,
    )
    base.update(overrides)
    return GenParams(**base)


@dataclass
class TrainingExample:
    base: RelGraph
    target: RelGraph
    gold_m: frozenset[tuple[int, int]]
    gold_ci: frozenset[int]

    def to_dict(self) -> dict:
        return {
            "base": graph_to_dict(self.base),
            "target": graph_to_dict(self.target),
            "gold_m": [list(p) for p in sorted(self.gold_m)],
            "gold_ci": sorted(self.gold_ci),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingExample":
        return cls(
            graph_from_dict(d["base"]),
            graph_from_dict(d["target"]),
            frozenset(tuple(p) for p in d["gold_m"]),
            frozenset(d["gold_ci"]),
        )


# Proto nodes: (symbol, kind, ordered, args) with args as indices into the proto list.
_Proto = tuple[str, NodeKind, bool, tuple[int, ...]]


@dataclass
class _Protos:
    nodes: list[_Proto] = field(default_factory=list)
    n_entities: int = 0

    def add_entity(self) -> int:
        self.nodes.append(("", NodeKind.ENTITY, False, ()))
        self.n_entities += 1
        return len(self.nodes) - 1


def _symbol(params: GenParams, rng: np.random.Generator, arity: int) -> tuple[str, NodeKind, bool]:
    is_fn = rng.random() < params.p_function
    ordered = bool(rng.random() < params.p_ordered) and arity >= 2
    # class index over (kind, arity, ordered); arity-1 has no orderedness
    cls = (arity - 1) * 2 + int(ordered)
    n = cls * params.vocab_per_class + int(rng.integers(params.vocab_per_class))
    return (f"F{n}" if is_fn else f"P{n}"), (NodeKind.FUNCTION if is_fn else NodeKind.PREDICATE), ordered


def _randint(rng: np.random.Generator, lo_hi: tuple[int, int]) -> int:
    return int(rng.integers(lo_hi[0], lo_hi[1] + 1))


def _grow(protos: _Protos, below: list[int], n_layers: int, params: GenParams,
          rng: np.random.Generator) -> list[int]:
    """Stack ``n_layers`` expression layers on top of ``below``; returns new ids."""
    lower = list(below)
    new: list[int] = []
    for _ in range(n_layers):
        layer = []
        for _ in range(_randint(rng, params.nodes_per_layer)):
            arity = min(int(rng.integers(1, params.max_arity + 1)), len(lower))
            if arity == 0:
                continue
            args = tuple(int(a) for a in rng.choice(lower, size=arity, replace=False))
            sym, kind, ordered = _symbol(params, rng, arity)
            protos.nodes.append((sym, kind, ordered, args))
            layer.append(len(protos.nodes) - 1)
        lower += layer
        new += layer
    return new


def _build(protos: _Protos, entity_names: dict[int, str], keep: set[int] | None = None) -> tuple[RelGraph, dict[int, int]]:
    """Materialize protos (in order) into a hash-consed graph; returns proto -> node id."""
    b = GraphBuilder()
    ids: dict[int, int] = {}
    for i, (sym, kind, ordered, args) in enumerate(protos.nodes):
        if keep is not None and i not in keep:
            continue
        if kind is NodeKind.ENTITY:
            ids[i] = b.entity(entity_names[i])
        else:
            ids[i] = b.expr(sym, kind, [ids[a] for a in args], ordered)
    return b.build(), ids


def gen_dag(params: GenParams, rng: np.random.Generator) -> RelGraph:
    """One layered random DAG: an entity layer plus ``k - 1`` expression layers."""
    protos = _Protos()
    k = _randint(rng, (params.min_layers, params.max_layers))
    ents = [protos.add_entity() for _ in range(_randint(rng, params.entities_per_dag))]
    _grow(protos, ents, k - 1, params, rng)
    names = {e: f"E{j}" for j, e in enumerate(ents)}
    return _build(protos, names)[0]


def _shared_protos(params: GenParams, rng: np.random.Generator) -> _Protos:
    protos = _Protos()
    for _ in range(_randint(rng, params.shared_dags)):
        k = _randint(rng, (params.min_layers, params.max_layers))
        ents = [protos.add_entity() for _ in range(_randint(rng, params.entities_per_dag))]
        _grow(protos, ents, k - 1, params, rng)
    return protos


def _extend(shared: _Protos, params: GenParams, rng: np.random.Generator) -> tuple[_Protos, int]:
    protos = _Protos(list(shared.nodes), shared.n_entities)
    n_shared = len(protos.nodes)
    ents = [protos.add_entity() for _ in range(_randint(rng, params.extension_entities))]
    _grow(protos, list(range(n_shared)) + ents, _randint(rng, params.extension_layers), params, rng)
    return protos, n_shared


def gold_inferences(base: RelGraph, shared: set[int]) -> frozenset[int]:
    """Base nodes that are ancestors of a shared node, or descendants of such an ancestor."""
    parents: dict[int, list[int]] = {v: [] for v in range(len(base))}
    for n in base:
        for a in n.args:
            parents[a].append(n.id)
    above: set[int] = set()
    stack = [p for s in shared for p in parents[s]]
    while stack:
        v = stack.pop()
        if v not in above:
            above.add(v)
            stack.extend(parents[v])
    above -= shared
    below: set[int] = set()
    stack = [a for v in above for a in base[v].args]
    while stack:
        v = stack.pop()
        if v not in below:
            below.add(v)
            stack.extend(base[v].args)
    return frozenset((above | below) - shared)


def _try_example(params: GenParams, rng: np.random.Generator) -> TrainingExample | None:
    shared = _shared_protos(params, rng)
    # entities of C without a parent inside C would be degenerate gold pairs
    used = {a for (_, _, _, args) in shared.nodes for a in args}
    keep = {i for i, (_, kind, _, _) in enumerate(shared.nodes) if kind is not NodeKind.ENTITY or i in used}

    graphs = []
    for _ in range(2):
        protos, n_shared = _extend(shared, params, rng)
        names = {}
        for i, (_, kind, _, _) in enumerate(protos.nodes):
            if kind is NodeKind.ENTITY:
                names[i] = f"E{i}"
        keep_all = keep | set(range(n_shared, len(protos.nodes)))
        # extension nodes may reference pruned orphan entities; those stay alive
        for i in range(n_shared, len(protos.nodes)):
            keep_all.update(a for a in protos.nodes[i][3])
        g, ids = _build(protos, names, keep_all)
        graphs.append((g, ids))

    (base, bid), (target, tid) = graphs
    # orphan entities kept alive by one side only are not part of C
    c_nodes = [i for i in sorted(keep) if i in bid and i in tid]
    gold_m = frozenset((bid[i], tid[i]) for i in c_nodes)
    if len({b for b, _ in gold_m}) != len(gold_m) or len({t for _, t in gold_m}) != len(gold_m):
        return None  # an extension node collapsed onto a shared node differently on each side
    if params.max_correspondences is not None and len(gold_m) > params.max_correspondences:
        return None
    if not gold_m:
        return None
    ci = gold_inferences(base, {b for b, _ in gold_m})
    return TrainingExample(base, target, gold_m, ci)


def gen_example(params: GenParams, rng: np.random.Generator, check: bool = True) -> TrainingExample:
    from .smt import candidate_inferences, check_mapping

    for _ in range(params.max_tries):
        ex = _try_example(params, rng)
        if ex is None:
            continue
        if check:
            if not check_mapping(ex.base, ex.target, ex.gold_m).error_free:
                continue
            if candidate_inferences(ex.base, ex.gold_m) != ex.gold_ci:
                continue
        return ex
    raise RuntimeError(f"no consistent example after {params.max_tries} tries; parameters too restrictive")


def example_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-example streams, so example i depends only on (seed, i)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate(n: int, params: GenParams, seed: int) -> list[TrainingExample]:
    return [gen_example(params, rng) for rng in example_rngs(seed, n)]


def write_dataset(path: str | Path, n: int, params: GenParams, seed: int = 0) -> None:
    path = Path(path)
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "n": n, "seed": seed, "params": params.to_dict()}
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rng in example_rngs(seed, n):
            f.write(json.dumps(gen_example(params, rng).to_dict(), sort_keys=True) + "\n")


def read_header(path: str | Path) -> dict:
    with Path(path).open(encoding="utf-8") as f:
        line = f.readline()
    return _check_header(line, path)


def _check_header(line: str, path) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError:
        raise DatasetFormatError(f"{path}: missing dataset header") from None
    if header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: schema version {header.get('version')} != {FORMAT_VERSION}")
    return header


def read_dataset(path: str | Path) -> Iterator[TrainingExample]:
    with Path(path).open(encoding="utf-8") as f:
        _check_header(f.readline(), path)
        for line in f:
            if line.strip():
                yield TrainingExample.from_dict(json.loads(line))

"""Relational representations as semi-ordered DAGs.

Graphs are built through :class:`GraphBuilder`, which hash-conses structurally
identical subexpressions and canonicalizes the arguments of unordered
relations, so that ``(R a b)`` and ``(R b a)`` become the same node.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterator, Sequence


class RelGraphError(ValueError):
    """Structural problem in a relational graph (cycle, bad reference, arity)."""


class ParseError(RelGraphError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class NodeKind(str, Enum):
    ENTITY = "entity"
    ATTRIBUTE = "attribute"
    FUNCTION = "function"
    PREDICATE = "predicate"


@dataclass(frozen=True)
class ExprNode:
    id: int
    label: str
    kind: NodeKind
    ordered: bool
    args: tuple[int, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def is_entity(self) -> bool:
        return self.kind is NodeKind.ENTITY


def _check_kind_arity(label: str, kind: NodeKind, arity: int) -> None:
    if kind is NodeKind.ENTITY and arity != 0:
        raise RelGraphError(f"entity {label!r} cannot take arguments")
    if kind is NodeKind.ATTRIBUTE and arity != 1:
        raise RelGraphError(f"attribute {label!r} must have arity 1, got {arity}")
    if kind in (NodeKind.FUNCTION, NodeKind.PREDICATE) and arity < 1:
        raise RelGraphError(f"{kind.value} {label!r} needs at least one argument")


class RelGraph:
    """Immutable DAG of expression and entity nodes with ids ``0..n-1``."""

    def __init__(self, nodes: Sequence[ExprNode]):
        self.nodes: tuple[ExprNode, ...] = tuple(nodes)
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise RelGraphError(f"node ids must be contiguous; position {i} holds id {node.id}")
            _check_kind_arity(node.label, node.kind, node.arity)
            for a in node.args:
                if not 0 <= a < len(self.nodes):
                    raise RelGraphError(f"node {i} references unknown node {a}")
        # raises on cycles
        self._layer_index = _compute_layers(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, v: int) -> ExprNode:
        return self.nodes[v]

    def __iter__(self) -> Iterator[ExprNode]:
        return iter(self.nodes)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RelGraph) and self.nodes == other.nodes

    def __hash__(self) -> int:
        return hash(self.nodes)

    def __repr__(self) -> str:
        n_ent = sum(1 for n in self.nodes if n.is_entity)
        return f"RelGraph({n_ent} entities, {len(self.nodes) - n_ent} expressions)"

    @cached_property
    def parents(self) -> tuple[tuple[int, ...], ...]:
        ps: list[list[int]] = [[] for _ in self.nodes]
        for node in self.nodes:
            for a in dict.fromkeys(node.args):
                ps[a].append(node.id)
        return tuple(tuple(p) for p in ps)

    @cached_property
    def roots(self) -> tuple[int, ...]:
        return tuple(v for v, p in enumerate(self.parents) if not p)

    def entities(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_entity]

    def expressions(self) -> list[int]:
        return [n.id for n in self.nodes if not n.is_entity]

    def layer_of(self, v: int) -> int:
        return self._layer_index[v]

    @cached_property
    def _descendants(self) -> tuple[frozenset[int], ...]:
        out: list[frozenset[int]] = [frozenset()] * len(self.nodes)
        for v in _topological_order(self.nodes):
            acc = {v}
            for a in self.nodes[v].args:
                acc |= out[a]
            out[v] = frozenset(acc)
        return tuple(out)

    @cached_property
    def _ancestors(self) -> tuple[frozenset[int], ...]:
        anc: list[set[int]] = [set() for _ in self.nodes]
        for v in reversed(_topological_order(self.nodes)):
            for p in self.parents[v]:
                anc[v].add(p)
                anc[v] |= anc[p]
        return tuple(frozenset(a) for a in anc)

    def descendants(self, v: int) -> frozenset[int]:
        """Strict descendants of ``v``."""
        return self._descendants[v] - {v}

    def ancestors(self, v: int) -> frozenset[int]:
        """Strict ancestors of ``v``."""
        return self._ancestors[v]


def _topological_order(nodes: Sequence[ExprNode]) -> list[int]:
    """Children before parents."""
    indeg = [0] * len(nodes)
    users: list[list[int]] = [[] for _ in nodes]
    for node in nodes:
        for a in set(node.args):
            indeg[node.id] += 1
            users[a].append(node.id)
    ready = [v for v in range(len(nodes)) if indeg[v] == 0]
    order: list[int] = []
    while ready:
        v = ready.pop()
        order.append(v)
        for u in users[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                ready.append(u)
    if len(order) != len(nodes):
        raise RelGraphError("cycle detected")
    return order


def _compute_layers(nodes: Sequence[ExprNode]) -> tuple[int, ...]:
    layer = [0] * len(nodes)
    for v in _topological_order(nodes):
        args = nodes[v].args
        layer[v] = 1 + max(layer[a] for a in args) if args else 0
    return tuple(layer)


def topo_layers(g: RelGraph) -> list[frozenset[int]]:
    """Stratify ``g`` so that every node sits one layer above its deepest argument."""
    if len(g) == 0:
        return []
    depth = max(g.layer_of(v) for v in range(len(g)))
    layers: list[set[int]] = [set() for _ in range(depth + 1)]
    for v in range(len(g)):
        layers[g.layer_of(v)].add(v)
    return [frozenset(layer) for layer in layers]


def rooted_subgraph(g: RelGraph, v: int) -> frozenset[int]:
    """``v`` together with all of its transitive arguments."""
    if not 0 <= v < len(g):
        raise RelGraphError(f"unknown node id {v}")
    return g._descendants[v]


class GraphBuilder:
    """Incrementally build a hash-consed :class:`RelGraph`.

    Each symbol keeps one kind, arity and orderedness for the lifetime of the
    builder; reusing it inconsistently raises :class:`RelGraphError`.
    """

    def __init__(self) -> None:
        self._nodes: list[ExprNode] = []
        self._index: dict[tuple, int] = {}
        self._symbols: dict[str, tuple[NodeKind, int, bool]] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def entity(self, label: str) -> int:
        return self._add(label, NodeKind.ENTITY, False, ())

    def expr(self, label: str, kind: NodeKind | str, args: Sequence[int], ordered: bool = True) -> int:
        kind = NodeKind(kind)
        if kind is NodeKind.ENTITY:
            raise RelGraphError(f"use entity() for {label!r}")
        for a in args:
            if not 0 <= a < len(self._nodes):
                raise RelGraphError(f"argument {a} of {label!r} does not exist yet")
        ordered = bool(ordered) and len(args) >= 2
        args = tuple(args) if ordered else tuple(sorted(args))
        return self._add(label, kind, ordered, args)

    def _add(self, label: str, kind: NodeKind, ordered: bool, args: tuple[int, ...]) -> int:
        _check_kind_arity(label, kind, len(args))
        sig = (kind, len(args), ordered)
        seen = self._symbols.setdefault(label, sig)
        if seen != sig:
            raise RelGraphError(
                f"symbol {label!r} used as {kind.value}/{len(args)} but previously as {seen[0].value}/{seen[1]}"
            )
        key = (label, args)
        if key in self._index:
            return self._index[key]
        v = len(self._nodes)
        self._nodes.append(ExprNode(v, label, kind, ordered, args))
        self._index[key] = v
        return v

    def find(self, label: str, args: Sequence[int] = ()) -> int | None:
        sig = self._symbols.get(label)
        if sig is not None and not sig[2]:
            args = sorted(args)
        return self._index.get((label, tuple(args)))

    def build(self) -> RelGraph:
        return RelGraph(self._nodes)


# --------------------------------------------------------------------------
# s-expression syntax

_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")
_KIND_MARKERS = {
    ":function": NodeKind.FUNCTION,
    ":attribute": NodeKind.ATTRIBUTE,
    ":predicate": NodeKind.PREDICATE,
    ":relation": NodeKind.PREDICATE,
}
_ORDER_MARKERS = {":unordered": False, ":ordered": True}


@dataclass
class _Tok:
    text: str
    line: int
    col: int


@dataclass
class _Decls:
    kinds: dict[str, NodeKind] = field(default_factory=dict)
    order: dict[str, bool] = field(default_factory=dict)


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the pattern matches every character class
            raise ParseError("unexpected character", line, pos - line_start + 1)
        s = m.group()
        if not s[0].isspace() and s[0] != ";":
            toks.append(_Tok(s, line, pos - line_start + 1))
        nl = s.count("\n")
        if nl:
            line += nl
            line_start = pos + s.rindex("\n") + 1
        pos = m.end()
    return toks


def _read_forms(toks: list[_Tok], decls: _Decls) -> list[tuple[_Tok, object]]:
    """Group tokens into nested lists, consuming declaration markers."""
    forms: list[tuple[_Tok, object]] = []
    i = 0

    def read(i: int) -> tuple[object, int]:
        tok = toks[i]
        if tok.text == ")":
            raise ParseError("unexpected ')'", tok.line, tok.col)
        if tok.text != "(":
            return tok, i + 1
        items = []
        i += 1
        while True:
            if i >= len(toks):
                raise ParseError("unclosed '('", tok.line, tok.col)
            if toks[i].text == ")":
                return (tok, items), i + 1
            item, i = read(i)
            items.append(item)

    while i < len(toks):
        tok = toks[i]
        if tok.text.startswith(":"):
            # a declaration line: one or more markers followed by symbols, e.g. ":unordered :function AND"
            markers, names = [], []
            while i < len(toks) and toks[i].line == tok.line and toks[i].text not in "()":
                (markers if toks[i].text.startswith(":") else names).append(toks[i])
                i += 1
            for m in markers:
                if m.text not in _KIND_MARKERS and m.text not in _ORDER_MARKERS:
                    raise ParseError(f"unknown marker {m.text}", m.line, m.col)
            if not names:
                raise ParseError(f"marker {tok.text} declares no symbols", tok.line, tok.col)
            for m in markers:
                for n in names:
                    if m.text in _KIND_MARKERS:
                        decls.kinds[n.text] = _KIND_MARKERS[m.text]
                    else:
                        decls.order[n.text] = _ORDER_MARKERS[m.text]
            continue
        form, i = read(i)
        forms.append((tok, form))
    return forms


def parse_sexpr(text: str) -> RelGraph:
    """Parse a sequence of s-expressions into a hash-consed graph.

    Bare atoms are entities. Heads default to ordered predicates unless
    declared with ``:function``, ``:attribute``, ``:predicate`` and/or
    ``:unordered`` before use.
    """
    decls = _Decls()
    forms = _read_forms(_tokenize(text), decls)
    b = GraphBuilder()

    def build(form) -> int:
        if isinstance(form, _Tok):
            if form.text in decls.kinds:
                raise ParseError(f"{form.text!r} is declared {decls.kinds[form.text].value} but used as an entity",
                                 form.line, form.col)
            try:
                return b.entity(form.text)
            except RelGraphError as e:
                raise ParseError(str(e), form.line, form.col) from None
        open_tok, items = form
        if not items:
            raise ParseError("empty expression", open_tok.line, open_tok.col)
        head, *rest = items
        if not isinstance(head, _Tok):
            raise ParseError("expression head must be a symbol", open_tok.line, open_tok.col)
        if not rest:
            raise ParseError(f"{head.text!r} applied to no arguments", head.line, head.col)
        args = [build(x) for x in rest]
        kind = decls.kinds.get(head.text, NodeKind.PREDICATE)
        ordered = decls.order.get(head.text, True)
        try:
            return b.expr(head.text, kind, args, ordered)
        except RelGraphError as e:
            raise ParseError(str(e), head.line, head.col) from None

    for _, form in forms:
        build(form)
    return b.build()


def to_sexpr(g: RelGraph) -> str:
    """Render ``g`` in the syntax accepted by :func:`parse_sexpr`.

    Every node is written as its own top-level statement in id order, which
    reproduces the same id assignment when parsed back.
    """
    lines = []
    for kind, marker in ((NodeKind.FUNCTION, ":function"), (NodeKind.ATTRIBUTE, ":attribute")):
        syms = sorted({n.label for n in g if n.kind is kind})
        if syms:
            lines.append(f"{marker} " + " ".join(syms))
    unordered = sorted({n.label for n in g if not n.is_entity and n.arity >= 2 and not n.ordered})
    if unordered:
        lines.append(":unordered " + " ".join(unordered))

    def render(v: int) -> str:
        n = g[v]
        if n.is_entity:
            return n.label
        return "(" + n.label + " " + " ".join(render(a) for a in n.args) + ")"

    lines.extend(render(v) for v in range(len(g)))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# mappings and serialization


@dataclass(frozen=True)
class Mapping:
    """Correspondences, candidate inferences and structural score."""

    correspondences: frozenset[tuple[int, int]] = frozenset()
    inferences: frozenset[int] = frozenset()
    score: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "correspondences", frozenset((int(b), int(t)) for b, t in self.correspondences))
        object.__setattr__(self, "inferences", frozenset(int(i) for i in self.inferences))
        if self.score < 0:
            raise ValueError("score must be non-negative")

    def __len__(self) -> int:
        return len(self.correspondences)

    @property
    def base_nodes(self) -> frozenset[int]:
        return frozenset(b for b, _ in self.correspondences)

    @property
    def target_nodes(self) -> frozenset[int]:
        return frozenset(t for _, t in self.correspondences)

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.correspondences)

    def validate(self, base: RelGraph, target: RelGraph) -> None:
        for b, t in self.correspondences:
            if not (0 <= b < len(base) and 0 <= t < len(target)):
                raise RelGraphError(f"correspondence {(b, t)} references unknown nodes")
        if not all(0 <= i < len(base) for i in self.inferences):
            raise RelGraphError("inference references unknown base node")
        if self.inferences & self.base_nodes:
            raise RelGraphError("candidate inferences must be unmatched base nodes")


def graph_to_dict(g: RelGraph) -> dict:
    return {
        "nodes": [
            {"id": n.id, "label": n.label, "kind": n.kind.value, "ordered": n.ordered, "args": list(n.args)}
            for n in g
        ]
    }


def graph_from_dict(d: dict) -> RelGraph:
    try:
        nodes = [
            ExprNode(int(n["id"]), str(n["label"]), NodeKind(n["kind"]), bool(n["ordered"]),
                     tuple(int(a) for a in n["args"]))
            for n in d["nodes"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise RelGraphError(f"malformed graph json: {e}") from None
    return RelGraph(sorted(nodes, key=lambda n: n.id))


def mapping_to_dict(m: Mapping) -> dict:
    return {
        "correspondences": [list(p) for p in m.sorted_pairs()],
        "inferences": sorted(m.inferences),
        "score": m.score,
    }


def mapping_from_dict(d: dict) -> Mapping:
    return Mapping(
        frozenset(tuple(p) for p in d.get("correspondences", [])),
        frozenset(d.get("inferences", [])),
        int(d.get("score", 0)),
    )


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _dot_cluster(g: RelGraph, prefix: str, title: str, color: str) -> list[str]:
    out = [f"  subgraph cluster_{prefix} {{", f"    label={_dot_quote(title)};", f"    color={color};"]
    for n in g:
        shape = "ellipse" if n.is_entity else "box"
        out.append(f"    {prefix}{n.id} [label={_dot_quote(f'[{n.id}] {n.label}')}, shape={shape}];")
    for n in g:
        for i, a in enumerate(n.args):
            lab = f' [label="{i}"]' if n.ordered else ""
            out.append(f"    {prefix}{n.id} -> {prefix}{a}{lab};")
    out.append("  }")
    return out


def to_dot(base: RelGraph, target: RelGraph | None = None, mapping: Mapping | None = None) -> str:
    """Graphviz rendering; with a target, graphs sit side by side and
    correspondences are drawn as dashed undirected green edges."""
    lines = ["digraph relgraph {", "  rankdir=TB;"]
    lines += _dot_cluster(base, "b", "base", "red")
    if target is not None:
        lines += _dot_cluster(target, "t", "target", "blue")
    if mapping is not None:
        if target is None:
            raise ValueError("a mapping needs both base and target graphs to render")
        for b, t in mapping.sorted_pairs():
            lines.append(f"  b{b} -> t{t} [style=dashed, color=green, dir=none, constraint=false];")
        for i in sorted(mapping.inferences):
            lines.append(f"  b{i} [style=filled, fillcolor=lightyellow];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def serialize(obj: RelGraph | Mapping, format: str = "json", *, base: RelGraph | None = None,
              target: RelGraph | None = None) -> str:
    if format == "json":
        d = graph_to_dict(obj) if isinstance(obj, RelGraph) else mapping_to_dict(obj)
        return json.dumps(d, sort_keys=True)
    if format == "dot":
        if isinstance(obj, RelGraph):
            return to_dot(obj)
        if base is None or target is None:
            raise ValueError("dot rendering of a mapping needs base= and target=")
        return to_dot(base, target, obj)
    raise ValueError(f"unknown format {format!r}")


def deserialize(text: str) -> RelGraph | Mapping:
    d = json.loads(text)
    return graph_from_dict(d) if "nodes" in d else mapping_from_dict(d)


def count_dot_correspondences(dot: str) -> int:
    return sum(1 for line in dot.splitlines() if "style=dashed" in line)


def relabel(g: RelGraph, names: dict[str, str]) -> RelGraph:
    """Consistently rename symbols, keeping ids and structure."""
    return RelGraph([ExprNode(n.id, names.get(n.label, n.label), n.kind, n.ordered, n.args) for n in g])

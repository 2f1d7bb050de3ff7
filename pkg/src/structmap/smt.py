"""Structure-mapping constraints, structural scoring and candidate inferences.

These functions are the ground truth every other part of the package is
measured against. Mappings can be passed either as :class:`~structmap.ir.Mapping`
objects or as plain iterables of ``(base_id, target_id)`` pairs.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Union

from .ir import Mapping, NodeKind, RelGraph, rooted_subgraph

Pair = tuple[int, int]
MappingLike = Union[Mapping, Iterable[Pair]]


def _pairs(m: MappingLike) -> frozenset[Pair]:
    if isinstance(m, Mapping):
        return m.correspondences
    return frozenset((int(b), int(t)) for b, t in m)


@dataclass
class ViolationReport:
    one_to_one: list[tuple[Pair, Pair]] = field(default_factory=list)
    parallel_connectivity: list[Pair] = field(default_factory=list)
    identicality: list[Pair] = field(default_factory=list)
    degenerate: list[Pair] = field(default_factory=list)

    @property
    def error_free(self) -> bool:
        return not (self.one_to_one or self.parallel_connectivity or self.identicality or self.degenerate)

    def offending(self) -> dict[str, set[Pair]]:
        """Correspondences involved in each category of violation."""
        oto = {p for pair in self.one_to_one for p in pair}
        return {
            "one_to_one": oto,
            "parallel_connectivity": set(self.parallel_connectivity),
            "identicality": set(self.identicality),
            "degenerate": set(self.degenerate),
        }

    def to_dict(self) -> dict:
        return {
            "error_free": self.error_free,
            "one_to_one": [[list(a), list(b)] for a, b in self.one_to_one],
            "parallel_connectivity": [list(p) for p in self.parallel_connectivity],
            "identicality": [list(p) for p in self.identicality],
            "degenerate": [list(p) for p in self.degenerate],
        }


def check_one_to_one(m: MappingLike) -> list[tuple[Pair, Pair]]:
    pairs = sorted(_pairs(m))
    by_b: dict[int, list[Pair]] = defaultdict(list)
    by_t: dict[int, list[Pair]] = defaultdict(list)
    for p in pairs:
        by_b[p[0]].append(p)
        by_t[p[1]].append(p)
    clashes = set()
    for group in (*by_b.values(), *by_t.values()):
        clashes.update(combinations(group, 2))
    return sorted(clashes)


def _has_arg_bijection(bargs: tuple[int, ...], targs: tuple[int, ...], pairs: frozenset[Pair]) -> bool:
    """Perfect matching between argument positions using only pairs in M (Kuhn's algorithm)."""
    n = len(bargs)
    match_t: list[int | None] = [None] * n

    def augment(i: int, seen: set[int]) -> bool:
        for j in range(n):
            if j in seen or (bargs[i], targs[j]) not in pairs:
                continue
            seen.add(j)
            if match_t[j] is None or augment(match_t[j], seen):
                match_t[j] = i
                return True
        return False

    return all(augment(i, set()) for i in range(n))


def _pc_ok(gB: RelGraph, gT: RelGraph, pairs: frozenset[Pair], b: int, t: int) -> bool:
    nb, nt = gB[b], gT[t]
    if nb.is_entity and nt.is_entity:
        return True
    if nb.arity != nt.arity or nb.ordered != nt.ordered:
        return False
    if nb.ordered:
        return all((x, y) in pairs for x, y in zip(nb.args, nt.args))
    return _has_arg_bijection(nb.args, nt.args, pairs)


def check_parallel_connectivity(gB: RelGraph, gT: RelGraph, m: MappingLike) -> list[Pair]:
    pairs = _pairs(m)
    return sorted(p for p in pairs if not _pc_ok(gB, gT, pairs, *p))


def _ti_ok(gB: RelGraph, gT: RelGraph, pairs: frozenset[Pair], b: int, t: int) -> bool:
    nb, nt = gB[b], gT[t]
    if nb.kind is not nt.kind:
        return False
    if nb.kind is NodeKind.ENTITY or nb.label == nt.label:
        return True
    if nb.kind is NodeKind.FUNCTION:
        pt = set(gT.parents[t])
        return any((pb, q) in pairs for pb in gB.parents[b] for q in pt)
    return False


def check_tiered_identicality(gB: RelGraph, gT: RelGraph, m: MappingLike) -> list[Pair]:
    pairs = _pairs(m)
    return sorted(p for p in pairs if not _ti_ok(gB, gT, pairs, *p))


def _is_degenerate(gB: RelGraph, gT: RelGraph, mb: set[int], mt: set[int], b: int, t: int) -> bool:
    if not (gB[b].is_entity and gT[t].is_entity):
        return False
    return not any(p in mb for p in gB.parents[b]) or not any(p in mt for p in gT.parents[t])


def find_degenerate(gB: RelGraph, gT: RelGraph, m: MappingLike) -> list[Pair]:
    pairs = _pairs(m)
    mb = {b for b, _ in pairs}
    mt = {t for _, t in pairs}
    return sorted(p for p in pairs if _is_degenerate(gB, gT, mb, mt, *p))


def check_mapping(gB: RelGraph, gT: RelGraph, m: MappingLike) -> ViolationReport:
    pairs = _pairs(m)
    return ViolationReport(
        one_to_one=check_one_to_one(pairs),
        parallel_connectivity=check_parallel_connectivity(gB, gT, pairs),
        identicality=check_tiered_identicality(gB, gT, pairs),
        degenerate=find_degenerate(gB, gT, pairs),
    )


# --------------------------------------------------------------------------
# structural evaluation


@dataclass
class ScoreBreakdown:
    valid: frozenset[Pair]
    roots: frozenset[Pair]
    total: int
    per_root: dict[Pair, int]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "valid": sorted(map(list, self.valid)),
            "roots": sorted(map(list, self.roots)),
            "per_root": {f"{b},{t}": s for (b, t), s in sorted(self.per_root.items())},
        }


def valid_correspondences(gB: RelGraph, gT: RelGraph, m: MappingLike) -> frozenset[Pair]:
    """Correspondences whose rooted subgraphs are violation-free and that are not degenerate.

    Walks the parallel-connectivity closure of each correspondence, so the
    cost per correspondence is linear in the size of its subgraphs.
    """
    pairs = _pairs(m)
    cb = Counter(b for b, _ in pairs)
    ct = Counter(t for _, t in pairs)
    partner_b = {b: t for b, t in pairs if cb[b] == 1}
    mb, mt = set(cb), set(ct)
    ok: dict[Pair, bool] = {}

    def closure_ok(root: Pair) -> bool:
        stack, seen = [root], set()
        while stack:
            x, y = stack.pop()
            if (x, y) in seen:
                continue
            seen.add((x, y))
            if cb[x] != 1 or ct[y] != 1:
                return False
            if not _ti_ok(gB, gT, pairs, x, y) or not _pc_ok(gB, gT, pairs, x, y):
                return False
            for a in gB[x].args:
                if a not in partner_b:
                    return False
                stack.append((a, partner_b[a]))
        return True

    for p in pairs:
        ok[p] = not _is_degenerate(gB, gT, mb, mt, *p) and closure_ok(p)
    return frozenset(p for p, v in ok.items() if v)


def score(gB: RelGraph, gT: RelGraph, m: MappingLike) -> ScoreBreakdown:
    valid = valid_correspondences(gB, gT, m)
    vb = {b for b, _ in valid}
    vt = {t for _, t in valid}
    roots = frozenset(
        (b, t) for b, t in valid
        if not (gB.ancestors(b) & vb) and not (gT.ancestors(t) & vt)
    )
    per_root = {r: len(rooted_subgraph(gB, r[0])) for r in roots}
    return ScoreBreakdown(valid, roots, sum(per_root.values()), per_root)


def structural_score(gB: RelGraph, gT: RelGraph, m: MappingLike) -> int:
    return score(gB, gT, m).total


# --------------------------------------------------------------------------
# candidate inferences


def candidate_inferences(gB: RelGraph, m: MappingLike) -> frozenset[int]:
    """Unmatched base nodes with support in the mapping.

    Least fixed point of: a node is a candidate inference if one of its
    descendants is matched, or one of its ancestors is a candidate inference.
    """
    matched = {b for b, _ in _pairs(m)}
    if not matched:
        return frozenset()
    supported = set()
    for b in matched:
        supported |= gB.ancestors(b)
    supported -= matched
    closure = set(supported)
    for v in supported:
        closure |= gB.descendants(v)
    return frozenset(closure - matched)


@dataclass(frozen=True)
class TargetRef:
    """A base node replaced by its target correspondent."""

    target_id: int


@dataclass(frozen=True)
class Skolem:
    """Placeholder for an unmatched base entity carried into the target."""

    base_id: int
    label: str


@dataclass(frozen=True)
class Term:
    label: str
    args: tuple


def project_inference(gB: RelGraph, gT: RelGraph, m: MappingLike, n: int) -> Term:
    """Carry candidate inference ``n`` into the target vocabulary."""
    pairs = _pairs(m)
    if n not in candidate_inferences(gB, pairs):
        raise ValueError(f"base node {n} is not a candidate inference")
    partner = dict(pairs)

    def copy(v: int):
        if v in partner:
            return TargetRef(partner[v])
        node = gB[v]
        if node.is_entity:
            return Skolem(v, node.label)
        return Term(node.label, tuple(copy(a) for a in node.args))

    return copy(n)


def render_term(term, target: RelGraph | None = None) -> str:
    """Infix rendering; target references print as ``[id]`` or, given the
    target graph, as the target expression itself."""
    if isinstance(term, TargetRef):
        if target is None:
            return f"[{term.target_id}]"
        return _render_target(target, term.target_id)
    if isinstance(term, Skolem):
        return f"(:skolem {term.label})"
    return f"{term.label}(" + ", ".join(render_term(a, target) for a in term.args) + ")"


def _render_target(g: RelGraph, v: int) -> str:
    node = g[v]
    if node.is_entity:
        return node.label
    return f"{node.label}(" + ", ".join(_render_target(g, a) for a in node.args) + ")"


def count_skolems(term) -> int:
    if isinstance(term, Skolem):
        return 1
    if isinstance(term, Term):
        return sum(count_skolems(a) for a in term.args)
    return 0


def complete_mapping(gB: RelGraph, gT: RelGraph, pairs: MappingLike) -> Mapping:
    """Mapping with candidate inferences and structural score filled in."""
    pairs = _pairs(pairs)
    return Mapping(pairs, candidate_inferences(gB, pairs), structural_score(gB, gT, pairs))

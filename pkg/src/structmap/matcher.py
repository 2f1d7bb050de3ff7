"""Symbolic oracle: the constraint-satisfying mapping of maximal structural score.

Every error-free mapping is the union of the parallel-connectivity closures
("kernels") of its root correspondences, and its score is the sum of the
root subgraph sizes. The exact solver therefore branches over kernels
rather than over individual hypotheses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from itertools import permutations
from typing import Iterator

from .ir import Mapping, NodeKind, RelGraph, rooted_subgraph
from .smt import candidate_inferences, structural_score

log = logging.getLogger(__name__)

Pair = tuple[int, int]


class HypothesisKind(str, Enum):
    ENTITY = "entity"
    IDENTICAL = "identical-predicate"
    TIERED = "tiered-function"


@dataclass(frozen=True, order=True)
class MatchHypothesis:
    base: int
    target: int
    kind: HypothesisKind


class BudgetExceeded(RuntimeError):
    """Exact search hit its node cap; fall back to :func:`solve_greedy`."""


@dataclass
class SearchBudget:
    max_nodes: int = 5_000_000
    max_hypotheses: int = 24
    mode: str = "exact"

    def __post_init__(self) -> None:
        if self.mode not in ("exact", "greedy"):
            raise ValueError(f"unknown search mode {self.mode!r}")


def _compatible(gB: RelGraph, gT: RelGraph, b: int, t: int, *, as_root: bool) -> HypothesisKind | None:
    nb, nt = gB[b], gT[t]
    if nb.kind is not nt.kind:
        return None
    if nb.kind is NodeKind.ENTITY:
        return None if as_root else HypothesisKind.ENTITY
    if nb.arity != nt.arity or nb.ordered != nt.ordered:
        return None
    if nb.label == nt.label:
        return HypothesisKind.IDENTICAL
    if nb.kind is NodeKind.FUNCTION and not as_root:
        return HypothesisKind.TIERED
    return None


def enumerate_hypotheses(gB: RelGraph, gT: RelGraph) -> list[MatchHypothesis]:
    out = []
    for nb in gB:
        for nt in gT:
            kind = _compatible(gB, gT, nb.id, nt.id, as_root=False)
            if kind is not None:
                out.append(MatchHypothesis(nb.id, nt.id, kind))
    return out


def _unique_perms(args: tuple[int, ...]) -> list[tuple[int, ...]]:
    return sorted(set(permutations(args)))


def _extend(gB: RelGraph, gT: RelGraph, work: list[Pair], assign: dict[int, int],
            inv: dict[int, int]) -> Iterator[dict[int, int]]:
    if not work:
        yield assign
        return
    (x, y), rest = work[0], work[1:]
    if x in assign:
        if assign[x] == y:
            yield from _extend(gB, gT, rest, assign, inv)
        return
    if y in inv or _compatible(gB, gT, x, y, as_root=False) is None:
        return
    assign = {**assign, x: y}
    inv = {**inv, y: x}
    nx, ny = gB[x], gT[y]
    if nx.ordered:
        yield from _extend(gB, gT, list(zip(nx.args, ny.args)) + rest, assign, inv)
    else:
        for perm in _unique_perms(ny.args):
            yield from _extend(gB, gT, list(zip(nx.args, perm)) + rest, assign, inv)


def kernels_for(gB: RelGraph, gT: RelGraph, b: int, t: int, limit: int | None = None) -> list[frozenset[Pair]]:
    """All internally consistent parallel-connectivity closures rooted at ``(b, t)``."""
    if _compatible(gB, gT, b, t, as_root=True) is None:
        return []
    out: set[frozenset[Pair]] = set()
    for assign in _extend(gB, gT, [(b, t)], {}, {}):
        out.add(frozenset(assign.items()))
        if limit is not None and len(out) >= limit:
            break
    return sorted(out, key=sorted)


@dataclass(frozen=True)
class _Kernel:
    root: Pair
    size: int
    pairs: frozenset[Pair]


def _all_kernels(gB: RelGraph, gT: RelGraph, limit: int | None = None) -> list[_Kernel]:
    ks = []
    for nb in gB:
        if nb.is_entity:
            continue
        size = len(rooted_subgraph(gB, nb.id))
        for nt in gT:
            for pairs in kernels_for(gB, gT, nb.id, nt.id, limit):
                ks.append(_Kernel((nb.id, nt.id), size, pairs))
    ks.sort(key=lambda k: (-k.size, k.root, sorted(k.pairs)))
    return ks


def _fits(k: _Kernel, assign: dict[int, int], inv: dict[int, int]) -> bool:
    for b, t in k.pairs:
        if assign.get(b, t) != t or inv.get(t, b) != b:
            return False
    return True


def _finish(gB: RelGraph, gT: RelGraph, pairs: frozenset[Pair], expected: int | None = None) -> Mapping:
    s = structural_score(gB, gT, pairs)
    if expected is not None and s != expected:  # pragma: no cover - internal invariant
        raise AssertionError(f"kernel bookkeeping gave {expected}, scorer gave {s}")
    return Mapping(pairs, candidate_inferences(gB, pairs), s)


def solve_exact(gB: RelGraph, gT: RelGraph, budget: SearchBudget | None = None) -> Mapping:
    """Maximum-score error-free mapping by branch and bound.

    Ties are broken by fewer correspondences, then by the lexicographically
    smallest sorted ``(base, target)`` sequence.
    """
    budget = budget or SearchBudget()
    n_hyp = len(enumerate_hypotheses(gB, gT))
    cap = None if n_hyp <= budget.max_hypotheses else budget.max_nodes
    ks = _all_kernels(gB, gT)

    best_key: tuple = (0, 0, [])
    best_pairs: frozenset[Pair] = frozenset()
    nodes = 0

    def bound(i: int, assign: dict[int, int], inv: dict[int, int]) -> int:
        seen: set[int] = set()
        total = 0
        for k in ks[i:]:
            b, t = k.root
            if b in seen or b in assign or t in inv:
                continue
            seen.add(b)
            total += k.size
        return total

    def better(score: int, assign: dict[int, int]) -> bool:
        key = (-score, len(assign), sorted(assign.items()))
        return key < best_key

    def search(i: int, score: int, assign: dict[int, int], inv: dict[int, int]) -> None:
        nonlocal nodes, best_key, best_pairs
        nodes += 1
        if cap is not None and nodes > cap:
            raise BudgetExceeded(f"exact search exceeded {cap} branch nodes ({n_hyp} hypotheses)")
        if better(score, assign):
            best_key = (-score, len(assign), sorted(assign.items()))
            best_pairs = frozenset(assign.items())
        if i == len(ks):
            return
        ub = score + bound(i, assign, inv)
        if ub < -best_key[0] or (ub == -best_key[0] and len(assign) > best_key[1]):
            return
        k = ks[i]
        if k.root[0] not in assign and _fits(k, assign, inv):
            a2 = {**assign, **dict(k.pairs)}
            i2 = {**inv, **{t: b for b, t in k.pairs}}
            search(i + 1, score + k.size, a2, i2)
        search(i + 1, score, assign, inv)

    search(0, 0, {}, {})
    log.debug("exact search: %d hypotheses, %d kernels, %d nodes", n_hyp, len(ks), nodes)
    return _finish(gB, gT, best_pairs, -best_key[0])


def solve_greedy(gB: RelGraph, gT: RelGraph, kernel_limit: int = 64) -> Mapping:
    """Merge kernels in descending root-size order, skipping any that conflict."""
    assign: dict[int, int] = {}
    inv: dict[int, int] = {}
    for k in _all_kernels(gB, gT, kernel_limit):
        if k.root[0] in assign or not _fits(k, assign, inv):
            continue
        assign.update(k.pairs)
        inv.update({t: b for b, t in k.pairs})
    return _finish(gB, gT, frozenset(assign.items()))


def solve(gB: RelGraph, gT: RelGraph, budget: SearchBudget | None = None) -> Mapping:
    budget = budget or SearchBudget()
    if budget.mode == "greedy":
        return solve_greedy(gB, gT)
    try:
        return solve_exact(gB, gT, budget)
    except BudgetExceeded as e:
        log.warning("%s; falling back to greedy", e)
        return solve_greedy(gB, gT)

import json

import pytest

from conftest import A, FULL, S, pairs
from structmap.fixtures import SOLAR_AND
from structmap.ir import (
    GraphBuilder, Mapping, NodeKind, ParseError, RelGraph, RelGraphError, ExprNode,
    count_dot_correspondences, deserialize, parse_sexpr, rooted_subgraph, serialize, to_dot,
    to_sexpr, topo_layers,
)


def test_atom_counts(atom):
    assert len(atom.expressions()) == 5
    assert len(atom.entities()) == 2


def test_solar_counts_and_causes_args(solar):
    assert len(solar.expressions()) == 11
    assert len(solar.entities()) == 2
    causes = solar[S(18)]
    assert causes.label == "CAUSES"
    assert len(causes.args) == 2
    assert causes.args[0] == SOLAR_AND
    assert solar[SOLAR_AND].label == "AND" and not solar[SOLAR_AND].ordered


def test_single_entity():
    g = parse_sexpr("sun")
    assert len(g) == 1 and g[0].is_entity and g.expressions() == []


def test_hash_consing_shares_repeated_subexpressions():
    g = parse_sexpr("(MASS sun)\n(GREATER (MASS sun) (MASS planet))\n(MASS sun)")
    assert len(g) == 5
    assert sum(1 for n in g if n.label == "MASS") == 2


def test_unordered_args_canonical():
    a = parse_sexpr(":unordered R\n(R a b)")
    b = parse_sexpr(":unordered R\nb a\n(R a b)\n(R b a)")
    assert len([n for n in b if n.label == "R"]) == 1
    assert sorted(x.label for x in a) == sorted(x.label for x in b)


def test_declarations(solar):
    kinds = {n.label: n.kind for n in solar}
    assert kinds["MASS"] is NodeKind.FUNCTION
    assert kinds["YELLOW"] is NodeKind.ATTRIBUTE
    assert kinds["GREATER"] is NodeKind.PREDICATE
    assert kinds["sun"] is NodeKind.ENTITY


def test_parse_is_deterministic(solar):
    from structmap.fixtures import sexp_text
    assert parse_sexpr(sexp_text("solar")) == solar


@pytest.mark.parametrize("text,line,col", [
    ("(A b", 1, 1),
    ("(A b))", 1, 6),
    ("a\n  ()", 2, 3),
])
def test_syntax_errors_carry_position(text, line, col):
    with pytest.raises(ParseError) as e:
        parse_sexpr(text)
    assert (e.value.line, e.value.column) == (line, col)


def test_arity_mismatch_rejected():
    with pytest.raises(RelGraphError):
        parse_sexpr("(R a b)\n(R a)")


def test_cycle_rejected():
    nodes = [ExprNode(0, "P", NodeKind.PREDICATE, False, (1,)), ExprNode(1, "Q", NodeKind.PREDICATE, False, (0,))]
    with pytest.raises(RelGraphError):
        RelGraph(nodes)


def test_topo_layers_atom(atom):
    layers = topo_layers(atom)
    assert layers == [{A(1), A(2)}, {A(3), A(4), A(5), A(6)}, {A(7)}]


def test_topo_layers_trivial():
    assert topo_layers(parse_sexpr("e")) == [{0}]
    chain = parse_sexpr("(P (Q e))")
    assert [len(l) for l in topo_layers(chain)] == [1, 1, 1]


def test_topo_layers_stratify(solar):
    layers = topo_layers(solar)
    where = {v: k for k, layer in enumerate(layers) for v in layer}
    assert set(where) == set(range(len(solar)))
    for n in solar:
        assert all(where[a] < where[n.id] for a in n.args)
        if n.args:
            assert where[n.id] == 1 + max(where[a] for a in n.args)


def test_rooted_subgraph(atom, solar):
    assert rooted_subgraph(atom, A(7)) == {A(7), A(3), A(4), A(1), A(2)}
    assert rooted_subgraph(atom, A(1)) == {A(1)}
    expected = {S(k) for k in (18, 15, 17, 14, 10, 11, 8, 9)} | {SOLAR_AND}
    assert rooted_subgraph(solar, S(18)) == expected


def test_unknown_id(atom):
    with pytest.raises((RelGraphError, IndexError, KeyError)):
        rooted_subgraph(atom, 99)


def test_json_round_trip(solar):
    assert deserialize(serialize(solar)) == solar
    m = Mapping(pairs(*FULL), frozenset({3}), 11)
    assert deserialize(serialize(m)) == m


def test_graph_json_schema(atom):
    d = json.loads(serialize(atom))
    assert set(d) == {"nodes"}
    assert set(d["nodes"][0]) == {"id", "label", "kind", "ordered", "args"}


def test_sexpr_round_trip(solar, atom):
    for g in (solar, atom):
        assert parse_sexpr(to_sexpr(g)) == g


def test_dot_correspondence_edges(atom, solar):
    assert count_dot_correspondences(to_dot(atom, solar, Mapping())) == 0
    m = Mapping(pairs(*FULL))
    dot = serialize(m, "dot", base=atom, target=solar)
    assert count_dot_correspondences(dot) == len(FULL)
    assert dot.startswith("digraph")


def test_mapping_validate(atom, solar):
    Mapping(pairs(*FULL)).validate(atom, solar)
    with pytest.raises(RelGraphError):
        Mapping(frozenset({(A(3), S(10))}), frozenset({A(3)})).validate(atom, solar)
    with pytest.raises(RelGraphError):
        Mapping(frozenset({(40, 0)})).validate(atom, solar)


def test_builder_symbol_consistency():
    b = GraphBuilder()
    e = b.entity("x")
    b.expr("F", "function", [e])
    with pytest.raises(RelGraphError):
        b.expr("F", "predicate", [e])

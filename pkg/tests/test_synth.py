import json

import numpy as np
import pytest

from structmap.ir import topo_layers
from structmap.smt import candidate_inferences, check_mapping
from structmap.synth import (
    DatasetFormatError, GenParams, TrainingExample, desk_params, gen_dag, gen_example, generate,
    gold_inferences, read_dataset, read_header, write_dataset,
)


def test_gen_dag_deterministic():
    p = GenParams()
    assert gen_dag(p, np.random.default_rng(4)) == gen_dag(p, np.random.default_rng(4))


def test_gen_dag_two_layers_only_entity_args():
    p = GenParams(min_layers=2, max_layers=2)
    for s in range(20):
        g = gen_dag(p, np.random.default_rng(s))
        for n in g:
            assert all(g[a].is_entity for a in n.args)
        assert len(topo_layers(g)) <= 2


def test_gen_dag_respects_arity():
    p = GenParams(max_arity=2)
    g = gen_dag(p, np.random.default_rng(0))
    assert max(n.arity for n in g) <= 2


def test_examples_consistent():
    for ex in generate(200, GenParams(), seed=3):
        assert check_mapping(ex.base, ex.target, ex.gold_m).error_free
        assert candidate_inferences(ex.base, ex.gold_m) == ex.gold_ci
        assert gold_inferences(ex.base, {b for b, _ in ex.gold_m}) == ex.gold_ci
        bs = [b for b, _ in ex.gold_m]
        ts = [t for _, t in ex.gold_m]
        assert len(set(bs)) == len(bs) and len(set(ts)) == len(ts)
        # the copies of a shared node carry the same label
        for b, t in ex.gold_m:
            assert ex.base[b].kind == ex.target[t].kind
            if not ex.base[b].is_entity:
                assert ex.base[b].label == ex.target[t].label


def test_desk_params_bounds():
    for ex in generate(200, desk_params(), seed=1):
        assert len(ex.gold_m) <= 12
        assert len(topo_layers(ex.base)) <= 4 + 2 + 1


def test_symbol_vocabulary():
    ex = gen_example(GenParams(), np.random.default_rng(9))
    for n in ex.base:
        assert n.label[0] in ("E", "F", "P")


def test_params_validation():
    with pytest.raises(ValueError):
        GenParams(min_layers=1)
    with pytest.raises(ValueError):
        GenParams(min_layers=5, max_layers=3)
    with pytest.raises(ValueError):
        GenParams(max_arity=0)
    with pytest.raises(ValueError):
        GenParams.from_dict({"layers": 3})
    p = desk_params()
    assert GenParams.from_dict(p.to_dict()) == p


def test_example_json_round_trip():
    ex = gen_example(desk_params(), np.random.default_rng(2))
    back = TrainingExample.from_dict(json.loads(json.dumps(ex.to_dict())))
    assert back == ex


def test_dataset_empty(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_dataset(path, 0, desk_params(), seed=0)
    assert len(path.read_text().splitlines()) == 1
    assert list(read_dataset(path)) == []
    assert read_header(path)["n"] == 0


def test_dataset_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(a, 100, desk_params(), seed=7)
    write_dataset(b, 100, desk_params(), seed=7)
    assert a.read_bytes() == b.read_bytes()


def test_dataset_round_trip_invariants(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset(path, 1000, desk_params(), seed=5)
    exs = list(read_dataset(path))
    assert len(exs) == 1000
    assert exs[:20] == generate(20, desk_params(), seed=5)
    for ex in exs:
        assert check_mapping(ex.base, ex.target, ex.gold_m).error_free
        assert candidate_inferences(ex.base, ex.gold_m) == ex.gold_ci


def test_dataset_is_lazy(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset(path, 3, desk_params(), seed=5)
    with open(path, "a") as f:
        f.write("{not json\n")
    it = read_dataset(path)
    assert next(it) is not None  # the broken tail is not read yet


def test_dataset_version_mismatch(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset(path, 1, desk_params())
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 99
    path.write_text(json.dumps(header) + "\n" + lines[1] + "\n")
    with pytest.raises(DatasetFormatError):
        list(read_dataset(path))
    path.write_text("garbage\n")
    with pytest.raises(DatasetFormatError):
        read_header(path)

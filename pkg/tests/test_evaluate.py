import json

import pytest

from conftest import A, FULL, S, pairs
from structmap.evaluate import ERROR_KINDS, aggregate, evaluate, score_example
from structmap.ir import Mapping
from structmap.matcher import solve_exact
from structmap.smt import candidate_inferences
from structmap.synth import desk_params, generate


@pytest.fixture(scope="module")
def dataset():
    return generate(40, desk_params(), seed=21)


def gold_predictor(dataset):
    def predict(gB, gT, i):
        ex = dataset[i]
        return Mapping(frozenset(ex.gold_m), frozenset(ex.gold_ci))
    return predict


def test_gold_predictions_are_perfect(dataset):
    rep = evaluate(gold_predictor(dataset), dataset)
    assert rep.struct_perf == 1.0 and rep.equivalent == 1.0 and rep.error_free == 1.0
    assert rep.larger == 0.0
    assert all(v == 0.0 for v in rep.err_rates.values())
    assert rep.ci.f1 == 1.0 and rep.ci.precision == 1.0 and rep.ci.recall == 1.0
    assert rep.ci.accuracy == 1.0 and rep.ci.specificity == 1.0


def test_empty_predictions(dataset):
    rep = evaluate(lambda gB, gT, i: Mapping(frozenset()), dataset)
    assert rep.struct_perf == 0.0
    assert rep.error_free == 1.0 and rep.equivalent == 0.0
    assert all(v == 0.0 for v in rep.err_rates.values())


def test_oracle_never_below_gold(dataset):
    rep = evaluate(lambda gB, gT, i: solve_exact(gB, gT), dataset[:15])
    assert rep.struct_perf >= 1.0
    assert rep.error_free == 1.0
    assert rep.equivalent + rep.larger == 1.0


def test_oracle_comparison_mode(dataset):
    rep = evaluate(gold_predictor(dataset), dataset[:10], comparison="oracle", oracle=solve_exact)
    assert rep.comparison == "oracle" and rep.struct_perf <= 1.0
    with pytest.raises(ValueError):
        evaluate(gold_predictor(dataset), dataset[:2], comparison="oracle")
    with pytest.raises(ValueError):
        evaluate(gold_predictor(dataset), dataset[:2], comparison="sme")


def test_error_fractions_per_correspondence(atom, solar):
    full = pairs(*FULL)
    pred = Mapping(full | {(A(7), S(16))})
    res = score_example(atom, solar, pred, full)
    assert not res.error_free
    # two of the eight correspondences share base [7]
    assert res.err_fractions["one_to_one"] == pytest.approx(2 / 8)
    lone = score_example(atom, solar, Mapping(pairs((1, 8))), full)
    assert lone.err_fractions["degenerate"] == 1.0 and lone.score == 0


def test_ci_metrics_against_smt_truth(atom, solar):
    full = pairs(*FULL)
    truth = candidate_inferences(atom, full)
    assert truth == frozenset()  # nothing in the atom is left to project
    res = score_example(solar, atom, Mapping(frozenset((t, b) for b, t in full), frozenset({S(18)})), ())
    # every unmatched solar node touches sun or planet, so all six are inferences
    assert res.ci_precision == 1.0 and res.ci_recall == pytest.approx(1 / 6)
    assert res.ci_specificity is None


def test_aggregate_rules(atom, solar):
    with pytest.raises(ValueError):
        aggregate([])
    res = score_example(atom, solar, Mapping(frozenset()), frozenset())
    rep = aggregate([res])
    # gold score 0 leaves nothing to compare against
    assert rep.struct_perf == 1.0 and rep.equivalent == 1.0


def test_report_json(dataset):
    rep = evaluate(gold_predictor(dataset), dataset[:5], r=3)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["schema_version"] == 1 and d["r"] == 3 and d["n"] == 5
    assert set(d["err_rates"]) == set(ERROR_KINDS)
    assert "error_free=1.000" in rep.summary()
    assert 0 <= rep.equivalent + rep.larger <= rep.error_free <= 1

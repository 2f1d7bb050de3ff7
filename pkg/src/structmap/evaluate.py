"""Structural evaluation of predicted mappings against a comparison set."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .ir import Mapping, RelGraph
from .smt import candidate_inferences, check_mapping, structural_score

REPORT_SCHEMA = 1
ERROR_KINDS = ("one_to_one", "parallel_connectivity", "identicality", "degenerate")


@dataclass
class CiMetrics:
    f1: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    accuracy: float = 0.0
    specificity: float = 0.0


@dataclass
class EvalReport:
    n: int
    r: int
    struct_perf: float
    larger: float
    equivalent: float
    error_free: float
    err_rates: dict[str, float]
    ci: CiMetrics
    comparison: str = "gold"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA
        return d

    def summary(self) -> str:
        e = self.err_rates
        return (f"n={self.n} r={self.r} struct={self.struct_perf:.3f} larger={self.larger:.3f} "
                f"equiv={self.equivalent:.3f} error_free={self.error_free:.3f} "
                f"1-1={e['one_to_one']:.3f} pc={e['parallel_connectivity']:.3f} "
                f"deg={e['degenerate']:.3f} ci_f1={self.ci.f1:.3f}")


@dataclass
class ExampleResult:
    score: int
    gold_score: int
    error_free: bool
    err_fractions: dict[str, float]
    ci_precision: float
    ci_recall: float
    ci_f1: float
    ci_accuracy: float
    ci_specificity: float | None


def _ratio(num: int, den: int, both_empty: float) -> float:
    if den == 0:
        return both_empty
    return num / den


def score_example(gB: RelGraph, gT: RelGraph, pred: Mapping, comparison: Iterable[tuple[int, int]]) -> ExampleResult:
    pairs = pred.correspondences
    report = check_mapping(gB, gT, pairs)
    off = report.offending()
    n = len(pairs)
    fractions = {k: (len(off[k]) / n if n else 0.0) for k in ERROR_KINDS}
    s = structural_score(gB, gT, pairs)
    gold_s = structural_score(gB, gT, comparison)

    truth = candidate_inferences(gB, pairs)
    predicted = frozenset(pred.inferences)
    universe = set(range(len(gB))) - pred.base_nodes
    tp = len(predicted & truth)
    precision = _ratio(tp, len(predicted), 1.0 if not truth else 0.0)
    recall = _ratio(tp, len(truth), 1.0 if not predicted else 0.0)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    negatives = universe - truth
    tn = len(negatives - predicted)
    accuracy = _ratio(tp + tn, len(universe), 1.0)
    specificity = tn / len(negatives) if negatives else None
    return ExampleResult(s, gold_s, report.error_free, fractions, precision, recall, f1, accuracy, specificity)


def aggregate(results: Sequence[ExampleResult], r: int = 1, comparison: str = "gold") -> EvalReport:
    if not results:
        raise ValueError("cannot evaluate an empty dataset")
    ratios = [x.score / x.gold_score for x in results if x.gold_score > 0]
    ef = [x.error_free for x in results]
    equiv = [x.error_free and x.score == x.gold_score for x in results]
    larger = [x.error_free and x.score > x.gold_score for x in results]
    spec = [x.ci_specificity for x in results if x.ci_specificity is not None]
    ci = CiMetrics(
        f1=float(np.mean([x.ci_f1 for x in results])),
        precision=float(np.mean([x.ci_precision for x in results])),
        recall=float(np.mean([x.ci_recall for x in results])),
        accuracy=float(np.mean([x.ci_accuracy for x in results])),
        specificity=float(np.mean(spec)) if spec else 1.0,
    )
    return EvalReport(
        n=len(results),
        r=r,
        struct_perf=float(np.mean(ratios)) if ratios else 1.0,
        larger=float(np.mean(larger)),
        equivalent=float(np.mean(equiv)),
        error_free=float(np.mean(ef)),
        err_rates={k: float(np.mean([x.err_fractions[k] for x in results])) for k in ERROR_KINDS},
        ci=ci,
        comparison=comparison,
    )


Predictor = Callable[[RelGraph, RelGraph, int], Mapping]


def evaluate(predict: Predictor, dataset: Iterable, r: int = 1, comparison: str = "gold",
             oracle: Callable[[RelGraph, RelGraph], Mapping] | None = None) -> EvalReport:
    """Evaluate ``predict(base, target, index)`` over ``dataset``.

    ``comparison="gold"`` scores against each example's gold mapping;
    ``"oracle"`` against ``oracle(base, target)`` instead.
    """
    if comparison not in ("gold", "oracle"):
        raise ValueError(f"unknown comparison {comparison!r}")
    results = []
    for i, ex in enumerate(dataset):
        pred = predict(ex.base, ex.target, i)
        if comparison == "gold":
            ref = ex.gold_m
        else:
            if oracle is None:
                raise ValueError("oracle comparison needs an oracle")
            ref = oracle(ex.base, ex.target).correspondences
        results.append(score_example(ex.base, ex.target, pred, ref))
    return aggregate(results, r, comparison)


def model_predictor(model, r: int, seed: int = 0) -> Predictor:
    """SEM predictions with an independent, reproducible rng per example."""
    from .amn import sem_select

    def predict(gB: RelGraph, gT: RelGraph, i: int) -> Mapping:
        return sem_select(gB, gT, model, r, np.random.default_rng([seed, i]))

    return predict

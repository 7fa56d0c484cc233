"""
Clinical-efficacy metrics over labels extracted from report text.

Findings are scored as (finding, severity) pairs; resolved findings are not
visible findings and only count towards progression accuracy.
"""

from collections import Counter
from typing import Dict, Iterable, Sequence, Set, Tuple

from priorrg.corpus.grammar import FINDINGS, NA, FindingLabel, active_labels, extract_labels

Pair = Tuple[str, str]


def _pairs(labels: Iterable[FindingLabel]) -> Set[Pair]:
    return {(l.finding, l.severity) for l in active_labels(labels)}


def _prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """P/R/F1 from counts, 0.0 where a denominator is empty"""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def ce_metrics(hypotheses: Sequence[str], references: Sequence[str]) -> Dict[str, float]:
    """Micro and macro P/R/F1; macro averages the classes present on either side"""
    counts: Dict[str, Counter] = {finding: Counter() for finding in FINDINGS}
    for hyp, ref in zip(hypotheses, references):
        predicted, expected = _pairs(extract_labels(hyp)), _pairs(extract_labels(ref))
        for pair in predicted & expected:
            counts[pair[0]]["tp"] += 1
        for pair in predicted - expected:
            counts[pair[0]]["fp"] += 1
        for pair in expected - predicted:
            counts[pair[0]]["fn"] += 1

    total = sum(counts.values(), Counter())
    micro = _prf(total["tp"], total["fp"], total["fn"])
    present = [c for c in counts.values() if sum(c.values())]
    per_class = [_prf(c["tp"], c["fp"], c["fn"]) for c in present]
    macro = tuple(sum(values) / len(per_class) for values in zip(*per_class)) if per_class else (0.0, 0.0, 0.0)
    return {
        "ce_precision_micro": micro[0],
        "ce_recall_micro": micro[1],
        "ce_f1_micro": micro[2],
        "ce_precision_macro": macro[0],
        "ce_recall_macro": macro[1],
        "ce_f1_macro": macro[2],
    }


def progression_accuracy(hypotheses: Sequence[str], reference_labels: Sequence[Iterable[FindingLabel]],
                         has_prior: Sequence[bool]) -> Tuple[float, int]:
    """
    Fraction of reference findings carrying a progression class (prior-bearing
    studies only) whose finding appears in the hypothesis with the same class.
    Returns (accuracy, number of scored findings).
    """
    correct, scored = 0, 0
    for hyp, labels, prior in zip(hypotheses, reference_labels, has_prior):
        if not prior:
            continue
        predicted = {}
        for label in extract_labels(hyp):
            predicted.setdefault(label.finding, set()).add(label.progression)
        for label in labels:
            label = FindingLabel(*label)
            if label.progression == NA:
                continue
            scored += 1
            correct += label.progression in predicted.get(label.finding, set())
    return (correct / scored if scored else 0.0), scored

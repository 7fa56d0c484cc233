import logging
from typing import List, Sequence

from sacrebleu.metrics import BLEU

from priorrg.errors import DataError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_ROUGE_BETA = 1.2


def bleu(hypotheses: Sequence[str], references: Sequence[str], n: int = 4) -> float:
    """
    Corpus BLEU-n in [0, 1] over whitespace tokens: clipped n-gram precisions,
    uniform weights over orders 1..n, brevity penalty, no smoothing.
    """
    if not 1 <= n <= 4:
        raise UsageError(f"BLEU order must be in 1..4, got {n}")
    if not hypotheses:
        raise DataError("Cannot compute BLEU over an empty hypothesis set")
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    metric = BLEU(max_ngram_order=n, tokenize="none", smooth_method="none", effective_order=False, force=True)
    return metric.corpus_score(list(hypotheses), [list(references)]).score / 100.0


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    row = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, 1):
            current = row[j]
            row[j] = prev + 1 if x == y else max(row[j], row[j - 1])
            prev = current
    return row[-1]


def rouge_l(hypothesis: Sequence[str], reference: Sequence[str], beta: float = DEFAULT_ROUGE_BETA) -> float:
    """LCS F-measure, recall weighted by beta^2"""
    if isinstance(hypothesis, str):
        hypothesis = hypothesis.split()
    if isinstance(reference, str):
        reference = reference.split()
    if not reference:
        raise DataError("ROUGE-L needs a non-empty reference")
    lcs = _lcs_length(hypothesis, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hypothesis)
    recall = lcs / len(reference)
    return (1 + beta ** 2) * precision * recall / (recall + beta ** 2 * precision)


def corpus_rouge_l(hypotheses: Sequence[str], references: Sequence[str], beta: float = DEFAULT_ROUGE_BETA) -> float:
    """Mean sentence-level ROUGE-L"""
    if not hypotheses:
        raise DataError("Cannot compute ROUGE-L over an empty hypothesis set")
    scores: List[float] = [rouge_l(h, r, beta) for h, r in zip(hypotheses, references)]
    return sum(scores) / len(scores)

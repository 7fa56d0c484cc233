import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

from pydantic import BaseModel

from priorrg.evalkit.clinical import ce_metrics, progression_accuracy
from priorrg.evalkit.nlg import DEFAULT_ROUGE_BETA, bleu, corpus_rouge_l
from priorrg.models.schemas import StudyRecord
from priorrg.services.artifacts import atomic_write

logger = logging.getLogger(__name__)


def _has_context(record: StudyRecord) -> bool:
    return record.indication is not None or record.history is not None


# Breakdown subsets by available prior knowledge
BREAKDOWN_GROUPS: Dict[str, Callable[[StudyRecord], bool]] = {
    "with_pi": lambda r: r.has_prior,
    "without_pi": lambda r: not r.has_prior,
    "with_cc": _has_context,
    "without_cc": lambda r: not _has_context(r),
    "with_pk": lambda r: r.has_prior or _has_context(r),
    "without_pk": lambda r: not (r.has_prior or _has_context(r)),
}


def score_generations(hypotheses: Sequence[str], records: Sequence[StudyRecord],
                      rouge_beta: float = DEFAULT_ROUGE_BETA) -> Dict[str, float]:
    references = [r.report for r in records]
    scores = {f"bleu{n}": bleu(hypotheses, references, n) for n in range(1, 5)}
    scores["rouge_l"] = corpus_rouge_l(hypotheses, references, rouge_beta)
    scores.update(ce_metrics(hypotheses, references))
    accuracy, scored = progression_accuracy(hypotheses, [r.labels() for r in records], [r.has_prior for r in records])
    scores["progression_accuracy"] = accuracy
    scores["n_progression"] = scored
    scores["n_samples"] = len(records)
    return scores


def breakdown(hypotheses: Sequence[str], records: Sequence[StudyRecord]) -> Dict[str, Dict[str, float]]:
    """BLEU-2 and micro CE-F1 per study subgroup; empty groups are left out"""
    groups = {}
    for name, member in BREAKDOWN_GROUPS.items():
        subset: List[Tuple[str, StudyRecord]] = [(h, r) for h, r in zip(hypotheses, records) if member(r)]
        if not subset:
            continue
        hyps, refs = [h for h, _ in subset], [r.report for _, r in subset]
        groups[name] = {
            "bleu2": bleu(hyps, refs, 2),
            "ce_f1_micro": ce_metrics(hyps, refs)["ce_f1_micro"],
            "n_samples": float(len(subset)),
        }
    return groups


def write_report(report: BaseModel, base: Path) -> Tuple[Path, Path]:
    """Emit `<base>.json` and a flat `<base>.txt` of key=value lines"""
    json_path, text_path = Path(f"{base}.json"), Path(f"{base}.txt")
    atomic_write(json_path, json.dumps(report.model_dump(), sort_keys=True, indent=2) + "\n")
    lines = [f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}"
             for key, value in sorted(report.flat().items())]
    atomic_write(text_path, "\n".join(lines) + "\n")
    logger.info(f"✅ Wrote {json_path} and {text_path}")
    return json_path, text_path

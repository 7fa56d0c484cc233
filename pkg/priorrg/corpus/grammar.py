"""
Template grammar of the synthetic reports.

One sentence per finding in canonical order; a progression clause is added
only when a prior image exists. `extract_labels` inverts `render_report`
exactly and degrades to "no label" on anything it cannot parse.
"""

import logging
from typing import Dict, Iterable, List, NamedTuple, Sequence, Set, Union

from priorrg.errors import DataError

logger = logging.getLogger(__name__)

NA = "n/a"

FINDINGS = ("opacity-blob", "cardiac-ellipse", "effusion-wedge", "device-line", "clear")
ABNORMAL_FINDINGS = FINDINGS[:-1]
SEVERITIES = ("mild", "moderate", "severe")
PROGRESSIONS = ("new", "worse", "stable", "improved", "resolved", NA)
QUADRANTS = ("upper-left", "upper-right", "lower-left", "lower-right")

# progression class -> report wording
PROGRESSION_PHRASES: Dict[str, str] = {
    "new": "new",
    "worse": "increased",
    "stable": "unchanged",
    "improved": "decreased",
    "resolved": "resolved",
}
PHRASE_TO_PROGRESSION = {v: k for k, v in PROGRESSION_PHRASES.items()}

# finding -> (sentence with {sev} slot, noun used in the resolved sentence, extraction keyword)
_TEMPLATES: Dict[str, tuple] = {
    "opacity-blob": ("there is {sev} airspace opacity", "airspace opacity", "opacity"),
    "cardiac-ellipse": ("there is {sev} cardiomegaly", "cardiomegaly", "cardiomegaly"),
    "effusion-wedge": ("there is a {sev} pleural effusion", "pleural effusion", "effusion"),
    "device-line": ("there is a {sev} support line", "support line", "line"),
}
CLEAR_SENTENCE = "the lungs are clear"
CLEAR_TAIL = "no acute findings"
KEYWORDS = {keyword: finding for finding, (_, _, keyword) in _TEMPLATES.items()}
KEYWORDS["clear"] = "clear"

# Clinical-context phrase pools, keyed by the finding that motivates them
INDICATIONS: Dict[str, List[str]] = {
    "opacity-blob": ["fever and cough", "evaluate for pneumonia"],
    "cardiac-ellipse": ["evaluate heart size", "leg swelling"],
    "effusion-wedge": ["evaluate for effusion", "decreased breath sounds"],
    "device-line": ["line placement", "confirm tube position"],
    "clear": ["routine exam", "preoperative evaluation"],
}
GENERIC_INDICATIONS = ["shortness of breath", "chest pain", "follow up"]
HISTORIES: Dict[str, List[str]] = {
    "opacity-blob": ["history of recent pneumonia", "history of smoking"],
    "cardiac-ellipse": ["history of heart failure", "history of hypertension"],
    "effusion-wedge": ["history of renal failure", "history of cancer"],
    "device-line": ["history of recent surgery", "history of intensive care stay"],
    "clear": ["no significant history"],
}
GENERIC_HISTORIES = ["history of diabetes", "history of asthma"]


class FindingLabel(NamedTuple):
    finding: str
    severity: str
    progression: str


def _sort_key(label: FindingLabel) -> tuple:
    severity_rank = SEVERITIES.index(label.severity) if label.severity in SEVERITIES else len(SEVERITIES)
    return FINDINGS.index(label.finding), severity_rank, PROGRESSIONS.index(label.progression)


def canonical_labels(labels: Iterable[FindingLabel]) -> List[FindingLabel]:
    return sorted((FindingLabel(*label) for label in labels), key=_sort_key)


def render_report(labels: Iterable[FindingLabel], prior_present: bool) -> List[str]:
    """Render a label set as report tokens"""
    labels = [FindingLabel(*label) for label in labels]
    if not labels:
        raise DataError("render_report needs at least one label (use the clear finding)")
    for label in labels:
        if label.finding not in FINDINGS:
            raise DataError(f"Unknown finding class '{label.finding}'")
        if label.progression not in PROGRESSIONS:
            raise DataError(f"Unknown progression '{label.progression}'")

    tokens: List[str] = []
    for label in canonical_labels(labels):
        show_progression = prior_present and label.progression != NA
        if label.progression == "resolved":
            if not prior_present:
                raise DataError(f"'{label.finding}' cannot be reported resolved without a prior image")
            noun = _TEMPLATES[label.finding][1]
            tokens += ["the", *noun.split(), "has", "resolved", "."]
            continue

        if label.finding == "clear":
            sentence = CLEAR_SENTENCE.split()
        else:
            if label.severity not in SEVERITIES:
                raise DataError(f"'{label.finding}' needs a severity, got '{label.severity}'")
            sentence = _TEMPLATES[label.finding][0].format(sev=label.severity).split()
        if show_progression:
            sentence += [",", PROGRESSION_PHRASES[label.progression]]
        tokens += sentence + ["."]
        if label.finding == "clear":
            tokens += CLEAR_TAIL.split() + ["."]
    return tokens


def _split_sentences(tokens: Sequence[str]) -> List[List[str]]:
    sentences, current = [], []
    for token in tokens:
        if token == ".":
            if current:
                sentences.append(current)
            current = []
        else:
            current.append(token)
    if current:
        sentences.append(current)
    return sentences


def extract_labels(report: Union[str, Sequence[str]]) -> Set[FindingLabel]:
    """Rule-based labeler over the closed vocabulary; never raises on malformed text"""
    tokens = report.split() if isinstance(report, str) else list(report)
    labels: Set[FindingLabel] = set()

    for sentence in _split_sentences(tokens):
        findings = {KEYWORDS[w] for w in sentence if w in KEYWORDS}
        if len(findings) != 1:
            continue
        finding = findings.pop()

        if "resolved" in sentence:
            if finding != "clear":
                labels.add(FindingLabel(finding, NA, "resolved"))
            continue

        phrases = {PHRASE_TO_PROGRESSION[w] for w in sentence if w in PHRASE_TO_PROGRESSION}
        if len(phrases) > 1:
            continue
        progression = phrases.pop() if phrases else NA

        if finding == "clear":
            labels.add(FindingLabel("clear", NA, progression))
            continue
        severities = {w for w in sentence if w in SEVERITIES}
        if len(severities) != 1:
            continue
        labels.add(FindingLabel(finding, severities.pop(), progression))
    return labels


def active_labels(labels: Iterable[FindingLabel]) -> Set[FindingLabel]:
    """Labels describing something visible now (drops resolved findings)"""
    return {FindingLabel(*l) for l in labels if l[2] != "resolved"}


def primary_category(labels: Iterable[FindingLabel]) -> str:
    """Most severe visible finding, ties broken in canonical order; clear when none"""
    candidates = [l for l in active_labels(labels) if l.finding != "clear" and l.severity in SEVERITIES]
    if not candidates:
        return "clear"
    return min(candidates, key=lambda l: (-SEVERITIES.index(l.severity), FINDINGS.index(l.finding))).finding


def grammar_tokens() -> Set[str]:
    """Every word the report and clinical-context grammars can produce"""
    words = {".", ",", "the", "has"}
    words.update(SEVERITIES)
    words.update(PROGRESSION_PHRASES.values())
    words.update(CLEAR_SENTENCE.split())
    words.update(CLEAR_TAIL.split())
    for sentence, noun, _ in _TEMPLATES.values():
        words.update(w for w in sentence.split() if w != "{sev}")
        words.update(noun.split())
    pools = list(INDICATIONS.values()) + list(HISTORIES.values()) + [GENERIC_INDICATIONS, GENERIC_HISTORIES]
    for pool in pools:
        for phrase in pool:
            words.update(phrase.split())
    return words

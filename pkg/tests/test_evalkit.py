import json
import math

import numpy as np
import pytest

from priorrg.corpus.grammar import NA, FindingLabel, render_report
from priorrg.errors import ConfigError, DataError
from priorrg.evalkit.clinical import ce_metrics, progression_accuracy
from priorrg.evalkit.nlg import bleu, corpus_rouge_l, rouge_l
from priorrg.evalkit.report import breakdown, score_generations, write_report
from priorrg.evalkit.retrieval import retrieval_precision
from priorrg.models.schemas import MetricReport, RetrievalReport, StudyRecord

CLEAR = "the lungs are clear . no acute findings ."
LONG = "there is moderate cardiomegaly , unchanged . there is a mild pleural effusion , new ."


# - BLEU -
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_bleu_identical_is_one(n):
    assert bleu([LONG, CLEAR], [LONG, CLEAR], n) == pytest.approx(1.0)


def test_bleu_zero_overlap():
    assert bleu(["a b c d e"], ["f g h i j"], 1) == 0.0
    assert bleu(["a b c d e"], ["f g h i j"], 4) == 0.0


def test_bleu_hand_count():
    # clipped unigram matches 5 of 6, equal lengths so no brevity penalty
    assert bleu(["the cat sat on the mat"], ["the cat is on the mat"], 1) == pytest.approx(5 / 6, abs=1e-6)


def test_bleu_brevity_penalty():
    score = bleu(["the cat"], ["the cat sat on the mat"], 1)
    assert score == pytest.approx(np.exp(1 - 6 / 2), abs=1e-6)


def f_rouge(p, r, beta2=1.2 ** 2):
    return (1 + beta2) * p * r / (r + beta2 * p)


# (hypotheses, references, (BLEU-1, BLEU-2, BLEU-3, BLEU-4), ROUGE-L), counted by hand
HAND_FIXTURES = [
    (["a b c d e f"], ["a b c d e g"],
     (5 / 6, math.sqrt(2 / 3), 0.5 ** (1 / 3), (1 / 3) ** 0.25), 5 / 6),
    (["a b a b"], ["a b c a b"],
     (math.exp(-0.25), math.exp(-0.25) * math.sqrt(2 / 3), 0.0, 0.0), f_rouge(1.0, 0.8)),
    (["the the the the"], ["the cat"],
     (0.25, 0.0, 0.0, 0.0), f_rouge(0.25, 0.5)),
    (["a b c d", "a b e f"], ["a b c d", "a b g h"],
     (0.75, math.sqrt(0.5), 0.25 ** (1 / 3), 0.125 ** 0.25), 0.75),
    (["a b c d e"], ["a b c d"],
     (0.8, math.sqrt(0.6), 0.4 ** (1 / 3), 0.2 ** 0.25), f_rouge(0.8, 1.0)),
    (["d c b a"], ["a b c d"],
     (1.0, 0.0, 0.0, 0.0), 0.25),
    (["a b c d"], ["a b c d e f g h"],
     (math.exp(-1),) * 4, f_rouge(1.0, 0.5)),
    (["a a a a a"], ["a a b a a"],
     (0.8, math.sqrt(0.4), 0.0, 0.0), 0.8),
    (["a b c d", "w x y z"], ["a b c d e f", "w x y z"],
     (math.exp(-0.25),) * 4, (f_rouge(1.0, 2 / 3) + 1.0) / 2),
    ([LONG], [LONG.replace("moderate", "severe")],
     (15 / 16, math.sqrt(15 / 16 * 13 / 15), (15 / 16 * 13 / 15 * 11 / 14) ** (1 / 3),
      (15 / 16 * 13 / 15 * 11 / 14 * 10 / 13) ** 0.25), 15 / 16),
]


@pytest.mark.parametrize("hyps,refs,expected_bleu,expected_rouge", HAND_FIXTURES)
def test_hand_computed_fixtures(hyps, refs, expected_bleu, expected_rouge):
    for n, expected in enumerate(expected_bleu, 1):
        assert bleu(hyps, refs, n) == pytest.approx(expected, abs=1e-6), f"BLEU-{n}"
    assert corpus_rouge_l(hyps, refs) == pytest.approx(expected_rouge, abs=1e-6)


def test_scores_ignore_corpus_order():
    hyps = [LONG, CLEAR, "there is mild cardiomegaly .", "a b c d e", "there is a new support line ."]
    refs = [LONG, "there is mild cardiomegaly .", CLEAR, "a b c d", "there is a mild support line , new ."]
    order = [3, 0, 4, 2, 1]
    shuffled_hyps, shuffled_refs = [hyps[i] for i in order], [refs[i] for i in order]
    for n in (1, 2, 3, 4):
        assert bleu(shuffled_hyps, shuffled_refs, n) == pytest.approx(bleu(hyps, refs, n), abs=1e-12)
    assert corpus_rouge_l(shuffled_hyps, shuffled_refs) == pytest.approx(corpus_rouge_l(hyps, refs), abs=1e-12)


def test_bleu_input_errors():
    with pytest.raises(DataError):
        bleu([], [], 4)
    with pytest.raises(DataError):
        bleu(["a"], ["a", "b"], 1)


# - ROUGE-L -
def test_rouge_identical_and_disjoint():
    assert rouge_l(LONG, LONG) == pytest.approx(1.0)
    assert rouge_l("a b c", "d e f") == 0.0


def test_rouge_lcs_hand_computation():
    assert rouge_l("a b c d", "a c d e") == pytest.approx(0.75, abs=1e-6)
    # LCS 2, P = 2/3, R = 2/5
    p, r, beta2 = 2 / 3, 2 / 5, 1.2 ** 2
    assert rouge_l("a b c", "a c d e f") == pytest.approx((1 + beta2) * p * r / (r + beta2 * p), abs=1e-6)


def test_corpus_rouge_averages():
    assert corpus_rouge_l(["a b", "x"], ["a b", "y"]) == pytest.approx(0.5)


# - clinical efficacy -
def test_ce_identical_is_perfect():
    refs = [LONG, CLEAR, "there is severe airspace opacity ."]
    scores = ce_metrics(refs, refs)
    assert all(v == 1.0 for v in scores.values())


def test_ce_all_clear_recall_is_clear_frequency():
    refs = [CLEAR, "there is mild cardiomegaly .", CLEAR, "there is severe airspace opacity .",
            "there is a mild support line ."]
    scores = ce_metrics([CLEAR] * 5, refs)
    assert scores["ce_recall_micro"] == pytest.approx(2 / 5)


def test_ce_hand_tabulated():
    pairs = [
        ("there is mild cardiomegaly .", "there is mild cardiomegaly ."),
        ("there is a mild pleural effusion .", "there is a moderate pleural effusion ."),
        (CLEAR, CLEAR),
        ("there is severe airspace opacity .", "there is severe airspace opacity . there is a mild support line ."),
        ("there is mild cardiomegaly .", CLEAR),
        ("there is moderate cardiomegaly . there is a mild support line .", "there is moderate cardiomegaly ."),
    ]
    scores = ce_metrics([h for h, _ in pairs], [r for _, r in pairs])
    # tp 4, fp 3, fn 3
    assert scores["ce_precision_micro"] == pytest.approx(4 / 7)
    assert scores["ce_recall_micro"] == pytest.approx(4 / 7)
    assert scores["ce_f1_micro"] == pytest.approx(4 / 7)
    # per class (P, R, F1): opacity (1, 1, 1), cardiomegaly (2/3, 1, .8), effusion 0, line 0, clear (1, .5, 2/3)
    assert scores["ce_precision_macro"] == pytest.approx((1 + 2 / 3 + 1) / 5)
    assert scores["ce_recall_macro"] == pytest.approx((1 + 1 + 0.5) / 5)
    assert scores["ce_f1_macro"] == pytest.approx((1 + 0.8 + 2 / 3) / 5)


# - progression accuracy -
STUDIES = [
    ({FindingLabel("cardiac-ellipse", "moderate", "stable")}, True),
    ({FindingLabel("opacity-blob", "severe", "worse"), FindingLabel("effusion-wedge", NA, "resolved")}, True),
    ({FindingLabel("clear", NA, "stable")}, True),
    ({FindingLabel("device-line", "mild", NA)}, False),
]


def test_progression_perfect_copies():
    hyps = [" ".join(render_report(labels, prior)) for labels, prior in STUDIES]
    accuracy, scored = progression_accuracy(hyps, [l for l, _ in STUDIES], [p for _, p in STUDIES])
    assert (accuracy, scored) == (1.0, 4)


def test_progression_without_change_words():
    hyps = [" ".join(render_report({FindingLabel(l.finding, l.severity if l.severity != NA else "mild", NA)
                                    for l in labels}, False)) for labels, _ in STUDIES]
    accuracy, _ = progression_accuracy(hyps, [l for l, _ in STUDIES], [p for _, p in STUDIES])
    assert accuracy == 0.0


def test_progression_manual_count():
    hyps = [
        "there is moderate cardiomegaly , unchanged .",
        "there is severe airspace opacity , increased .",
        CLEAR,
        "there is a mild support line .",
    ]
    accuracy, scored = progression_accuracy(hyps, [l for l, _ in STUDIES], [p for _, p in STUDIES])
    assert scored == 4
    assert accuracy == pytest.approx(2 / 4)


# - retrieval -
def test_self_matching_embeddings_retrieve_their_study():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(20, 8))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    cat, stu = retrieval_precision(emb, emb, ["a", "b"] * 10, [f"s{i}" for i in range(20)], [1, 3])
    assert stu["1"] == 1.0
    assert stu["3"] == pytest.approx(1 / 3)
    assert cat["1"] == 1.0


def test_random_embeddings_sit_at_chance():
    rng = np.random.default_rng(1)
    image = rng.normal(size=(1000, 16))
    report = rng.normal(size=(1000, 16))
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    report /= np.linalg.norm(report, axis=1, keepdims=True)
    categories = [f"c{i % 5}" for i in range(1000)]
    cat, _ = retrieval_precision(image, report, categories, [str(i) for i in range(1000)], [1])
    assert abs(cat["1"] - 0.2) <= 0.05


@pytest.mark.parametrize("seed", range(20))
def test_study_precision_never_exceeds_category_precision(seed):
    rng = np.random.default_rng(seed)
    image = rng.normal(size=(30, 8))
    report = rng.normal(size=(30, 8))
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    report /= np.linalg.norm(report, axis=1, keepdims=True)
    # two views per study, one category per study
    studies = [f"s{i // 2}" for i in range(30)]
    categories = [f"c{(i // 2) % 4}" for i in range(30)]
    cat, stu = retrieval_precision(image, report, categories, studies, [1, 3, 5])
    for k in cat:
        assert stu[k] <= cat[k]


def test_retrieval_k_out_of_range():
    emb = np.eye(3)
    with pytest.raises(ConfigError):
        retrieval_precision(emb, emb, ["a", "b", "c"], ["1", "2", "3"], [5])


# - report files -
def make_record(study_id, report, labels, has_prior, indication=None):
    return StudyRecord(study_id=study_id, patient_id="p", visit_index=1 if has_prior else 0, view_position="PA",
                       indication=indication, report=report, finding_labels=[list(l) for l in labels],
                       has_prior=has_prior, split="test")


def test_score_generations_and_breakdown():
    records = [
        make_record("s0", "there is moderate cardiomegaly , unchanged .",
                    [FindingLabel("cardiac-ellipse", "moderate", "stable")], True),
        make_record("s1", CLEAR, [FindingLabel("clear", NA, NA)], False, indication="chest pain"),
        make_record("s2", "there is severe airspace opacity .", [FindingLabel("opacity-blob", "severe", NA)], False),
    ]
    hyps = [r.report for r in records]
    scores = score_generations(hyps, records)
    assert scores["bleu1"] == pytest.approx(1.0)
    assert scores["progression_accuracy"] == 1.0
    assert scores["n_samples"] == 3

    groups = breakdown(hyps, records)
    assert groups["with_pi"]["n_samples"] == 1.0
    assert groups["with_cc"]["n_samples"] == 1.0
    assert groups["without_pk"]["n_samples"] == 1.0
    assert groups["with_pk"]["n_samples"] == 2.0


def test_write_report_emits_json_and_text(tmp_path):
    report = RetrievalReport(n_queries=10, per_class=2, cat_precision={"1": 0.5}, stu_precision={"1": 0.25})
    json_path, text_path = write_report(report, tmp_path / "out" / "retrieval")
    assert json.loads(json_path.read_text())["cat_precision"] == {"1": 0.5}
    lines = text_path.read_text().splitlines()
    assert "cat_p@1=0.500000" in lines
    assert "n_queries=10" in lines


def test_metric_report_flattens_breakdown():
    values = dict(bleu1=1.0, bleu2=1.0, bleu3=1.0, bleu4=1.0, rouge_l=1.0, ce_precision_micro=1.0,
                  ce_recall_micro=1.0, ce_f1_micro=1.0, ce_precision_macro=1.0, ce_recall_macro=1.0,
                  ce_f1_macro=1.0, progression_accuracy=1.0, n_samples=3)
    report = MetricReport(**values, breakdown={"with_pi": {"bleu2": 0.5}})
    assert report.flat()["with_pi.bleu2"] == 0.5

"""
Synthetic longitudinal corpus.

Each patient follows a latent disease trajectory: findings persist across
visits and move through a progression transition table, so the prior image is
the only place the change between visits is visible. Missing priors,
indications and histories are decided with per-study low-discrepancy draws so
the realised rates track the profile closely even on small corpora.
"""

import json
import logging
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field

from priorrg.config import RunConfig, settings
from priorrg.corpus.grammar import (ABNORMAL_FINDINGS, GENERIC_HISTORIES, GENERIC_INDICATIONS, HISTORIES,
                                    INDICATIONS, NA, QUADRANTS, SEVERITIES, FindingLabel, canonical_labels,
                                    primary_category, render_report)
from priorrg.corpus.render import VIEWS, Anatomy, FindingSpec, render_image, sample_anatomy, write_pgm
from priorrg.corpus.vocab import build_vocabulary
from priorrg.errors import ConfigError, DataError
from priorrg.models.schemas import CorpusSummary, StudyRecord

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.jsonl"
VOCAB_FILE = "vocab.txt"
SUMMARY_FILE = "corpus.json"
IMAGES_DIR = "images"

TRANSITIONS = (("stable", 0.5), ("worse", 0.2), ("improved", 0.2), ("resolved", 0.1))
NEW_FINDING_RATE = 0.15
INITIAL_FINDING_COUNTS = (0.3, 0.45, 0.25)  # P(0, 1, 2 findings) at the first visit
VIEW_WEIGHTS = (0.45, 0.45, 0.10)
CONTEXT_CORRELATION = 0.6

# Irrational steps of the three missingness streams
_WEYL_STEPS = ((math.sqrt(5) - 1) / 2, math.sqrt(2) - 1, math.sqrt(3) - 1)


class MissingnessProfile(BaseModel):
    prior_rate: float = Field(0.605, ge=0.0, le=1.0)
    indication_rate: float = Field(0.664, ge=0.0, le=1.0)
    history_rate: float = Field(0.306, ge=0.0, le=1.0)


@dataclass(frozen=True)
class _Weyl:
    offset: float
    step: float

    def __call__(self, k: int) -> float:
        return (self.offset + k * self.step) % 1.0


@dataclass
class _StudyDraft:
    fields: Dict[str, object]
    current: np.ndarray
    prior: Optional[np.ndarray]


def _sample_spec(rng: np.random.Generator, finding: str) -> FindingSpec:
    return FindingSpec(
        finding=finding,
        location=str(rng.choice(QUADRANTS)),
        size=float(rng.uniform(0.9, 1.1)),
        severity=str(rng.choice(SEVERITIES)),
    )


def _evolve(rng: np.random.Generator, state: Dict[str, FindingSpec]) -> Tuple[Dict[str, FindingSpec], Dict[str, str], List[str]]:
    """One visit step: returns the new finding state, progression per finding and resolved findings"""
    next_state: Dict[str, FindingSpec] = {}
    progression: Dict[str, str] = {}
    resolved: List[str] = []
    thresholds = np.cumsum([p for _, p in TRANSITIONS])

    for finding in ABNORMAL_FINDINGS:
        if finding not in state:
            continue
        spec = state[finding]
        transition = TRANSITIONS[int(np.searchsorted(thresholds, rng.random(), side="right"))][0]
        level = SEVERITIES.index(spec.severity)
        if transition == "worse":
            if level == len(SEVERITIES) - 1:
                transition = "stable"
            else:
                level += 1
        elif transition == "improved":
            if level == 0:
                transition = "resolved"
            else:
                level -= 1
        if transition == "resolved":
            resolved.append(finding)
            continue
        next_state[finding] = FindingSpec(spec.finding, spec.location, spec.size, SEVERITIES[level])
        progression[finding] = transition

    if rng.random() < NEW_FINDING_RATE:
        absent = [f for f in ABNORMAL_FINDINGS if f not in next_state and f not in resolved]
        if absent:
            finding = str(rng.choice(absent))
            next_state[finding] = _sample_spec(rng, finding)
            progression[finding] = "new"
    return next_state, progression, resolved


def _visit_labels(state: Dict[str, FindingSpec], progression: Dict[str, str], resolved: List[str],
                  prior_present: bool) -> Set[FindingLabel]:
    if not prior_present:
        labels = {FindingLabel(f, spec.severity, NA) for f, spec in state.items()}
        return labels or {FindingLabel("clear", NA, NA)}

    labels = {FindingLabel(f, spec.severity, progression[f]) for f, spec in state.items()}
    labels |= {FindingLabel(f, NA, "resolved") for f in resolved}
    if not state:
        # clear is "unchanged" only when the prior was clear too
        labels.add(FindingLabel("clear", NA, NA if resolved else "stable"))
    return labels


def _context(rng: np.random.Generator, category: str, pools: Dict[str, List[str]], generic: List[str]) -> str:
    pool = pools[category] if rng.random() < CONTEXT_CORRELATION else generic
    return str(rng.choice(pool))


def _simulate_patient(index: int, seed_seq: np.random.SeedSequence, visits: int, image_size: int,
                      profile: MissingnessProfile, streams: Tuple[_Weyl, _Weyl, _Weyl]) -> List[_StudyDraft]:
    rng = np.random.default_rng(seed_seq)
    anatomy: Anatomy = sample_anatomy(rng)
    patient_id = f"p{index:05d}"
    retention = min(1.0, profile.prior_rate * visits / (visits - 1)) if visits > 1 else 0.0
    prior_stream, indication_stream, history_stream = streams

    n_initial = int(rng.choice(len(INITIAL_FINDING_COUNTS), p=INITIAL_FINDING_COUNTS))
    initial = sorted((str(f) for f in rng.choice(ABNORMAL_FINDINGS, n_initial, replace=False)),
                     key=ABNORMAL_FINDINGS.index)
    state = {f: _sample_spec(rng, f) for f in initial}
    progression: Dict[str, str] = {}
    resolved: List[str] = []

    drafts: List[_StudyDraft] = []
    previous: Optional[Tuple[np.ndarray, str]] = None
    for t in range(visits):
        if t > 0:
            state, progression, resolved = _evolve(rng, state)
        view = VIEWS[int(rng.choice(len(VIEWS), p=VIEW_WEIGHTS))]
        image = render_image(anatomy, state.values(), view, seed=int(rng.integers(2**31)), image_size=image_size)

        k = index * visits + t
        prior_present = t > 0 and prior_stream(k) < retention
        labels = _visit_labels(state, progression, resolved, prior_present)
        category = primary_category(labels)
        indication = _context(rng, category, INDICATIONS, GENERIC_INDICATIONS)
        history = _context(rng, category, HISTORIES, GENERIC_HISTORIES)

        drafts.append(_StudyDraft(
            fields={
                "study_id": f"{patient_id}_v{t}",
                "patient_id": patient_id,
                "visit_index": t,
                "view_position": view,
                "prior_view_position": previous[1] if prior_present else None,
                "indication": indication if indication_stream(k) < profile.indication_rate else None,
                "history": history if history_stream(k) < profile.history_rate else None,
                "report": " ".join(render_report(labels, prior_present)),
                "finding_labels": [list(label) for label in canonical_labels(labels)],
                "has_prior": prior_present,
            },
            current=image,
            prior=previous[0] if prior_present else None,
        ))
        previous = (image, view)
    return drafts


def split_patients(rng: np.random.Generator, n_patients: int, train_fraction: float,
                   val_fraction: float) -> Dict[int, str]:
    """Assign whole patients to train/val/test so no trajectory crosses splits"""
    n_train = max(1, math.floor(train_fraction * n_patients))
    n_val = min(max(1, math.floor(val_fraction * n_patients)), n_patients - n_train)
    order = rng.permutation(n_patients)
    splits = {}
    for rank, patient in enumerate(order):
        splits[int(patient)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return splits


def _replace_directory(staging: Path, out_dir: Path) -> None:
    if out_dir.exists():
        if (out_dir / MANIFEST_FILE).exists():
            shutil.rmtree(out_dir)
        elif any(out_dir.iterdir()):
            raise DataError(f"Refusing to overwrite non-dataset directory {out_dir}")
        else:
            out_dir.rmdir()
    os.replace(staging, out_dir)


def generate_corpus(seed: int, n_patients: int, visits_per_patient: int, missingness_profile: MissingnessProfile,
                    out_dir: Path, image_size: int = 64, train_fraction: float = 0.7, val_fraction: float = 0.1,
                    workers: Optional[int] = None) -> CorpusSummary:
    """Generate and write a dataset directory; byte-identical for identical arguments"""
    if n_patients < 1:
        raise ConfigError(f"n_patients must be at least 1, got {n_patients}")
    if visits_per_patient < 1:
        raise ConfigError("visits_per_patient must be at least 1")

    root = np.random.SeedSequence(seed)
    corpus_seq, patients_seq = root.spawn(2)
    corpus_rng = np.random.default_rng(corpus_seq)
    offsets = corpus_rng.random(len(_WEYL_STEPS))
    streams = tuple(_Weyl(float(o), s) for o, s in zip(offsets, _WEYL_STEPS))
    splits = split_patients(corpus_rng, n_patients, train_fraction, val_fraction)
    patient_seqs = patients_seq.spawn(n_patients)

    logger.info(f"Generating {n_patients} patients x {visits_per_patient} visits (seed={seed})")
    with ThreadPoolExecutor(max_workers=workers or settings.workers) as pool:
        per_patient = list(pool.map(
            lambda i: _simulate_patient(i, patient_seqs[i], visits_per_patient, image_size, missingness_profile, streams),
            range(n_patients),
        ))

    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = out_dir.parent / f".{out_dir.name}.partial"
    if staging.exists():
        shutil.rmtree(staging)
    (staging / IMAGES_DIR).mkdir(parents=True)

    records: List[StudyRecord] = []
    for index, drafts in enumerate(per_patient):
        for draft in drafts:
            record = StudyRecord(**draft.fields, split=splits[index])
            write_pgm(staging / IMAGES_DIR / record.image_name("cur"), draft.current)
            if draft.prior is not None:
                write_pgm(staging / IMAGES_DIR / record.image_name("pri"), draft.prior)
            records.append(record)

    with open(staging / MANIFEST_FILE, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.model_dump(), sort_keys=True) + "\n")
    build_vocabulary().save(staging / VOCAB_FILE)

    n = len(records)
    summary = CorpusSummary(
        seed=seed,
        n_patients=n_patients,
        visits_per_patient=visits_per_patient,
        image_size=image_size,
        n_studies=n,
        split_counts={s: sum(r.split == s for r in records) for s in ("train", "val", "test")},
        prior_rate=sum(r.has_prior for r in records) / n,
        indication_rate=sum(r.indication is not None for r in records) / n,
        history_rate=sum(r.history is not None for r in records) / n,
    )
    (staging / SUMMARY_FILE).write_text(json.dumps(summary.model_dump(), sort_keys=True, indent=2) + "\n",
                                        encoding="utf-8")
    _replace_directory(staging, out_dir)

    logger.info(f"✅ Wrote {n} studies to {out_dir} (prior {summary.prior_rate:.3f}, "
                f"indication {summary.indication_rate:.3f}, history {summary.history_rate:.3f})")
    return summary


def generate_from_config(config: RunConfig, out_dir: Optional[Path] = None) -> CorpusSummary:
    profile = MissingnessProfile(
        prior_rate=config.prior_rate,
        indication_rate=config.indication_rate,
        history_rate=config.history_rate,
    )
    return generate_corpus(
        seed=config.seed,
        n_patients=config.n_patients,
        visits_per_patient=config.visits_per_patient,
        missingness_profile=profile,
        out_dir=out_dir or config.resolve(config.dataset_dir),
        image_size=config.image_size,
        train_fraction=config.train_fraction,
        val_fraction=config.val_fraction,
    )

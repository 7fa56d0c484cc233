import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from priorrg.config import RunConfig
from priorrg.corpus.generator import IMAGES_DIR, MANIFEST_FILE, VOCAB_FILE
from priorrg.corpus.grammar import FINDINGS, primary_category
from priorrg.corpus.render import read_pgm, view_index
from priorrg.corpus.vocab import (BOS_ID, EOS_ID, FINDINGS_ID, HISTORY_ID, INDICATION_ID, PAD_ID, Vocabulary)
from priorrg.errors import DataError
from priorrg.models.schemas import StudyRecord

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class Corpus:
    """A dataset directory loaded into memory (manifest + vocabulary; images on demand)"""

    def __init__(self, root: Path):
        self.root = Path(root)
        manifest = self.root / MANIFEST_FILE
        if not manifest.exists():
            raise DataError(f"No dataset at {self.root} (missing {MANIFEST_FILE}); run `priorrg synth` first")
        self.vocab = Vocabulary.load(self.root / VOCAB_FILE)
        self.records: List[StudyRecord] = []
        with open(manifest, encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                try:
                    self.records.append(StudyRecord(**json.loads(line)))
                except (ValueError, TypeError) as e:
                    raise DataError(f"{manifest}:{line_no}: malformed study record ({e})") from e
        logger.info(f"Loaded {len(self.records)} studies from {self.root}")

    def split(self, name: str, abnormal_only: bool = False) -> List[StudyRecord]:
        if name == "all":
            records = list(self.records)
        elif name in SPLITS:
            records = [r for r in self.records if r.split == name]
        else:
            raise DataError(f"Unknown split '{name}'")
        if abnormal_only:
            records = [r for r in records if primary_category(r.labels()) != "clear"]
        return records

    def images(self, record: StudyRecord) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        current = read_pgm(self.root / IMAGES_DIR / record.image_name("cur"))
        prior = read_pgm(self.root / IMAGES_DIR / record.image_name("pri")) if record.has_prior else None
        return current, prior


@dataclass
class StudyBatch:
    study_ids: List[str]
    current: torch.Tensor  # [B, 1, H, W]
    prior: torch.Tensor  # [B, 1, H, W], zeros where has_prior is False
    has_prior: torch.Tensor  # bool [B]
    view: torch.Tensor  # long [B]
    prior_view: torch.Tensor  # long [B]
    context_ids: torch.Tensor  # [B, p]
    context_mask: torch.Tensor  # bool [B, p], True on real tokens
    report_ids: torch.Tensor  # [B, r], "[FINDINGS] report"
    report_mask: torch.Tensor
    target_ids: torch.Tensor  # [B, t], "[BOS] report [EOS]" padded with [PAD]
    report_keys: List[Tuple[int, ...]]
    records: List[StudyRecord]

    def __len__(self) -> int:
        return len(self.study_ids)


def context_token_ids(record: StudyRecord, vocab: Vocabulary, use_clinical_context: bool = True) -> List[int]:
    """[INDICATION] indication [HISTORY] history; a missing part leaves its bare special"""
    ids = [INDICATION_ID]
    if use_clinical_context and record.indication:
        ids += vocab.tokenize(record.indication)
    ids.append(HISTORY_ID)
    if use_clinical_context and record.history:
        ids += vocab.tokenize(record.history)
    return ids


class StudyDataset(Dataset):
    """Torch view of a list of studies with the run's ablation switches applied"""

    def __init__(self, corpus: Corpus, records: Sequence[StudyRecord], config: RunConfig):
        self.corpus = corpus
        self.records = list(records)
        self.config = config

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> Dict[str, object]:
        record = self.records[i]
        vocab = self.corpus.vocab
        config = self.config
        current, prior = self.corpus.images(record)
        use_prior = config.use_prior_image and prior is not None

        report = vocab.tokenize(record.report)
        return {
            "record": record,
            "current": torch.from_numpy(current),
            "prior": torch.from_numpy(prior) if use_prior else torch.zeros_like(torch.from_numpy(current)),
            "has_prior": use_prior,
            "view": view_index(record.view_position),
            "prior_view": view_index(record.prior_view_position) if use_prior else 0,
            "context": context_token_ids(record, vocab, config.use_clinical_context)[:config.max_text_len],
            "report": ([FINDINGS_ID] + report)[:config.max_text_len],
            "target": ([BOS_ID] + report + [EOS_ID])[:config.max_new_tokens + 1],
            "key": tuple(report),
        }


def _pad(sequences: List[List[int]]) -> Tuple[torch.Tensor, torch.Tensor]:
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.bool)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[row, :len(seq)] = True
    return ids, mask


def collate_studies(items: List[Dict[str, object]]) -> StudyBatch:
    context_ids, context_mask = _pad([item["context"] for item in items])
    report_ids, report_mask = _pad([item["report"] for item in items])
    target_ids, _ = _pad([item["target"] for item in items])
    return StudyBatch(
        study_ids=[item["record"].study_id for item in items],
        current=torch.stack([item["current"] for item in items]).unsqueeze(1),
        prior=torch.stack([item["prior"] for item in items]).unsqueeze(1),
        has_prior=torch.tensor([item["has_prior"] for item in items], dtype=torch.bool),
        view=torch.tensor([item["view"] for item in items], dtype=torch.long),
        prior_view=torch.tensor([item["prior_view"] for item in items], dtype=torch.long),
        context_ids=context_ids,
        context_mask=context_mask,
        report_ids=report_ids,
        report_mask=report_mask,
        target_ids=target_ids,
        report_keys=[item["key"] for item in items],
        records=[item["record"] for item in items],
    )


def make_loader(corpus: Corpus, records: Sequence[StudyRecord], config: RunConfig, batch_size: int,
                shuffle: bool = False, seed: int = 0) -> DataLoader:
    """Deterministic single-process loader over `records`"""
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(
        StudyDataset(corpus, records, config),
        batch_size=batch_size,
        shuffle=shuffle,
        collate_fn=collate_studies,
        generator=generator,
        num_workers=0,
    )


def build_retrieval_set(records: Sequence[StudyRecord], per_class: int, seed: int) -> List[StudyRecord]:
    """Class-balanced sample: `per_class` studies for each of the five retrieval categories"""
    rng = np.random.default_rng(seed)
    by_class: Dict[str, List[StudyRecord]] = {c: [] for c in FINDINGS}
    for record in records:
        by_class[primary_category(record.labels())].append(record)

    selected: List[StudyRecord] = []
    for category in FINDINGS:
        pool = by_class[category]
        if len(pool) < per_class:
            raise DataError(f"Retrieval set needs {per_class} '{category}' studies, only {len(pool)} available")
        picks = rng.choice(len(pool), per_class, replace=False)
        selected += [pool[i] for i in sorted(picks)]
    return selected

from typing import Dict, List, Optional, Set

from pydantic import BaseModel, Field, field_validator

from priorrg.corpus.grammar import FINDINGS, PROGRESSIONS, FindingLabel


class StudyRecord(BaseModel):
    """One line of manifest.jsonl: every Study field except pixel data"""

    study_id: str
    patient_id: str
    visit_index: int = Field(..., ge=0)
    view_position: str
    prior_view_position: Optional[str] = None
    indication: Optional[str] = None
    history: Optional[str] = None
    report: str
    finding_labels: List[List[str]] = Field(..., description="(finding, severity, progression) triples")
    has_prior: bool
    split: str

    @field_validator("finding_labels")
    @classmethod
    def validate_labels(cls, v):
        for triple in v:
            if len(triple) != 3 or triple[0] not in FINDINGS or triple[2] not in PROGRESSIONS:
                raise ValueError(f"Malformed finding label {triple}")
        return v

    def labels(self) -> Set[FindingLabel]:
        return {FindingLabel(*triple) for triple in self.finding_labels}

    def image_name(self, which: str) -> str:
        return f"{self.study_id}_{which}.pgm"


class CorpusSummary(BaseModel):
    seed: int
    n_patients: int
    visits_per_patient: int
    image_size: int
    n_studies: int
    split_counts: Dict[str, int]
    prior_rate: float = Field(..., description="Realised fraction of studies with a prior image")
    indication_rate: float
    history_rate: float


class TrainingLogRow(BaseModel):
    epoch: int
    split: str
    loss: float
    lr: float
    seconds: float


class GenerationRecord(BaseModel):
    study_id: str
    hypothesis: str
    reference: str
    token_logprobs: List[float]
    score: float


class MetricReport(BaseModel):
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    ce_precision_micro: float
    ce_recall_micro: float
    ce_f1_micro: float
    ce_precision_macro: float
    ce_recall_macro: float
    ce_f1_macro: float
    progression_accuracy: float
    n_samples: int
    n_progression: int = Field(0, description="Findings scored by progression_accuracy")
    breakdown: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    def flat(self) -> Dict[str, float]:
        """Flat key -> value view for the text report"""
        values = self.model_dump(exclude={"breakdown"})
        for group, metrics in self.breakdown.items():
            for name, value in metrics.items():
                values[f"{group}.{name}"] = value
        return values


class RetrievalReport(BaseModel):
    n_queries: int
    per_class: int
    cat_precision: Dict[str, float] = Field(..., description="Cat-P@K keyed by K")
    stu_precision: Dict[str, float] = Field(..., description="Stu-P@K keyed by K")

    def flat(self) -> Dict[str, float]:
        values: Dict[str, float] = {"n_queries": self.n_queries, "per_class": self.per_class}
        values.update({f"cat_p@{k}": v for k, v in self.cat_precision.items()})
        values.update({f"stu_p@{k}": v for k, v in self.stu_precision.items()})
        return values


class ReproRecord(BaseModel):
    command: str
    artifact: str
    config: Dict[str, object]
    fingerprint: str
    seed: int
    commit: str = "unknown"
    wall_seconds: float

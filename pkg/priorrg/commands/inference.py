import json
import logging
from pathlib import Path
from typing import Dict, List

from priorrg.config import RunConfig
from priorrg.corpus.dataset import Corpus, make_loader
from priorrg.errors import DataError
from priorrg.evalkit.report import breakdown, score_generations, write_report
from priorrg.evalkit.retrieval import retrieval_eval
from priorrg.modeling.priorrg import PriorRGModel
from priorrg.models.schemas import GenerationRecord, MetricReport
from priorrg.services.artifacts import atomic_write, timed, write_repro_record
from priorrg.services.checkpoint import load_checkpoint, restore
from priorrg.training.common import seed_everything

logger = logging.getLogger(__name__)

EVAL_SPLIT = "test"


def load_model(corpus: Corpus, config: RunConfig, checkpoint: Path, stage: int) -> PriorRGModel:
    tensors, _ = load_checkpoint(checkpoint, config, vocab_size=len(corpus.vocab), expected_stage=stage)
    model = PriorRGModel(config, len(corpus.vocab))
    restore(model, tensors)
    model.eval()
    return model


def generate_reports(model: PriorRGModel, corpus: Corpus, config: RunConfig) -> List[GenerationRecord]:
    """Decode every evaluation-split study"""
    records = corpus.split(EVAL_SPLIT)
    generations = []
    for batch in make_loader(corpus, records, config, config.stage2_batch_size):
        for record, result in zip(batch.records, model.generate(batch)):
            generations.append(GenerationRecord(
                study_id=record.study_id,
                hypothesis=corpus.vocab.decode_generated(result.token_ids),
                reference=record.report,
                token_logprobs=result.token_logprobs,
                score=result.score,
            ))
    return generations


def cmd_generate(config: RunConfig) -> Path:
    seed_everything(config.seed)
    corpus = Corpus(config.resolve(config.dataset_dir))
    out = config.resolve(config.generations_file)
    with timed("generate") as clock:
        model = load_model(corpus, config, config.resolve(config.stage2_checkpoint), stage=2)
        generations = generate_reports(model, corpus, config)
        atomic_write(out, "".join(json.dumps(g.model_dump(), sort_keys=True) + "\n" for g in generations))
    logger.info(f"✅ Generated {len(generations)} reports (beam={config.beam_size}, K={config.max_new_tokens})")
    write_repro_record(out, "generate", config, clock["seconds"])
    return out


def read_generations(path: Path) -> List[GenerationRecord]:
    if not path.exists():
        raise DataError(f"Generations file not found: {path}; run `priorrg generate` first")
    with open(path, encoding="utf-8") as f:
        return [GenerationRecord(**json.loads(line)) for line in f if line.strip()]


def cmd_evaluate(config: RunConfig) -> Path:
    corpus = Corpus(config.resolve(config.dataset_dir))
    base = config.resolve(config.metrics_file)
    with timed("evaluate") as clock:
        generations = read_generations(config.resolve(config.generations_file))
        by_id: Dict[str, object] = {r.study_id: r for r in corpus.records}
        missing = [g.study_id for g in generations if g.study_id not in by_id]
        if missing:
            raise DataError(f"Generations reference unknown studies, e.g. {missing[0]}")
        records = [by_id[g.study_id] for g in generations]
        hypotheses = [g.hypothesis for g in generations]
        report = MetricReport(**score_generations(hypotheses, records, config.rouge_beta),
                              breakdown=breakdown(hypotheses, records))
        json_path, _ = write_report(report, base)
    write_repro_record(json_path, "evaluate", config, clock["seconds"])
    return json_path


def cmd_retrieve(config: RunConfig) -> Path:
    seed_everything(config.seed)
    corpus = Corpus(config.resolve(config.dataset_dir))
    base = config.resolve(config.retrieval_file)
    with timed("retrieve") as clock:
        model = load_model(corpus, config, config.resolve(config.stage1_checkpoint), stage=1)
        json_path, _ = write_report(retrieval_eval(model, corpus, config), base)
    write_repro_record(json_path, "retrieve", config, clock["seconds"])
    return json_path

import logging
from pathlib import Path

from priorrg.config import RunConfig
from priorrg.corpus.dataset import Corpus
from priorrg.services.artifacts import timed, write_repro_record
from priorrg.training.stage1 import train_stage1
from priorrg.training.stage2 import train_stage2

logger = logging.getLogger(__name__)


def _log_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix(".log.csv")


def cmd_pretrain(config: RunConfig) -> Path:
    corpus = Corpus(config.resolve(config.dataset_dir))
    checkpoint = config.resolve(config.stage1_checkpoint)
    with timed("pretrain") as clock:
        train_stage1(corpus, config, checkpoint, _log_path(checkpoint))
    write_repro_record(checkpoint, "pretrain", config, clock["seconds"])
    return checkpoint


def cmd_finetune(config: RunConfig) -> Path:
    corpus = Corpus(config.resolve(config.dataset_dir))
    stage1 = config.resolve(config.stage1_checkpoint) if config.init_from_stage1 else None
    checkpoint = config.resolve(config.stage2_checkpoint)
    with timed("finetune") as clock:
        train_stage2(corpus, config, stage1, checkpoint, _log_path(checkpoint))
    write_repro_record(checkpoint, "finetune", config, clock["seconds"])
    return checkpoint

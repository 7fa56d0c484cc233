import logging
from pathlib import Path
from typing import Optional

from priorrg.config import RunConfig
from priorrg.corpus.dataset import Corpus, make_loader
from priorrg.errors import DataError
from priorrg.modeling.priorrg import SHARED_MODULES, PriorRGModel
from priorrg.services.checkpoint import save_checkpoint
from priorrg.training.common import TrainingLog, TrainingResult, fit, seed_everything, trainable

logger = logging.getLogger(__name__)


def stage1_parameter_groups(model: PriorRGModel, config: RunConfig):
    """Trainable shared-module parameters at the Stage 1 learning rate"""
    params = [p for name in SHARED_MODULES for p in trainable(getattr(model, name).parameters())]
    return [{"params": params, "lr": config.stage1_lr}]


def train_stage1(corpus: Corpus, config: RunConfig, checkpoint_path: Path,
                 log_path: Optional[Path] = None) -> TrainingResult:
    """Contrastive pre-training; the best-validation model is written to `checkpoint_path`"""
    train_records = corpus.split("train")
    if not train_records:
        raise DataError("Stage 1 needs at least one training study")
    seed_everything(config.seed)

    model = PriorRGModel(config, len(corpus.vocab))
    train_loader = make_loader(corpus, train_records, config, config.stage1_batch_size, shuffle=True, seed=config.seed)
    val_loader = make_loader(corpus, corpus.split("val"), config, config.stage1_batch_size)
    logger.info(f"Stage 1: {len(train_records)} training studies, {len(val_loader.dataset)} validation studies")

    def loss_fn(batch):
        return model.align(batch).loss

    def on_improvement(epoch: int, loss: float) -> None:
        save_checkpoint(checkpoint_path, model, config, stage=1, vocab_size=len(corpus.vocab))

    # Epoch-zero snapshot, so a run with no improving epoch still yields a checkpoint
    save_checkpoint(checkpoint_path, model, config, stage=1, vocab_size=len(corpus.vocab))
    result = fit(model, loss_fn, stage1_parameter_groups(model, config), train_loader, val_loader, config,
                 config.stage1_epochs, on_improvement, TrainingLog(log_path))
    logger.info(f"✅ Stage 1 done: best loss {result.best_loss:.4f} at epoch {result.best_epoch}")
    return result

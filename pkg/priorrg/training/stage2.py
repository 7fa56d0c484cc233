import logging
from pathlib import Path
from typing import Dict, List, Optional

import torch

from priorrg.config import RunConfig
from priorrg.corpus.dataset import Corpus, make_loader
from priorrg.errors import DataError
from priorrg.evalkit.nlg import bleu
from priorrg.modeling.priorrg import DECODER_MODULE, SHARED_MODULES, PriorRGModel
from priorrg.services.checkpoint import load_checkpoint, restore, save_checkpoint
from priorrg.training.common import TrainingLog, TrainingResult, fit, seed_everything

logger = logging.getLogger(__name__)


def stage2_parameter_groups(model: PriorRGModel, config: RunConfig) -> List[Dict[str, object]]:
    """Decoder parameters at decoder_lr, everything else at other_lr"""
    decoder, other = [], []
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        (decoder if name.startswith(f"{DECODER_MODULE}.") else other).append(param)
    return [
        {"params": decoder, "lr": config.decoder_lr, "name": "decoder"},
        {"params": other, "lr": config.other_lr, "name": "other"},
    ]


def build_stage2_model(corpus: Corpus, config: RunConfig, stage1_checkpoint: Optional[Path]) -> PriorRGModel:
    """Fresh model, with the shared modules copied from Stage 1 when configured"""
    model = PriorRGModel(config, len(corpus.vocab))
    if config.init_from_stage1:
        if stage1_checkpoint is None:
            raise DataError("Stage 2 initialises from Stage 1 but no Stage 1 checkpoint was given")
        tensors, _ = load_checkpoint(stage1_checkpoint, config, vocab_size=len(corpus.vocab), expected_stage=1)
        restore(model, tensors, SHARED_MODULES)
        logger.info(f"Initialised shared modules from {stage1_checkpoint}")
    else:
        logger.info("Stage 2 starts from random initialisation")
    return model


def validation_bleu4(model: PriorRGModel, corpus: Corpus, config: RunConfig) -> Optional[float]:
    """BLEU-4 of generated reports on the first validation studies, None without any"""
    records = corpus.split("val")[:config.val_generation_limit]
    if not records:
        return None
    model.eval()
    hypotheses = []
    for batch in make_loader(corpus, records, config, config.stage2_batch_size):
        for result in model.generate(batch):
            hypotheses.append(corpus.vocab.decode_generated(result.token_ids))
    return bleu(hypotheses, [r.report for r in records], 4)


def train_stage2(corpus: Corpus, config: RunConfig, stage1_checkpoint: Optional[Path], checkpoint_path: Path,
                 log_path: Optional[Path] = None) -> TrainingResult:
    train_records = corpus.split("train", abnormal_only=config.abnormal_only)
    if not train_records:
        raise DataError("Stage 2 needs at least one training study")
    seed_everything(config.seed)

    model = build_stage2_model(corpus, config, stage1_checkpoint)
    train_loader = make_loader(corpus, train_records, config, config.stage2_batch_size, shuffle=True, seed=config.seed)
    val_loader = make_loader(corpus, corpus.split("val", abnormal_only=config.abnormal_only), config,
                             config.stage2_batch_size)
    logger.info(f"Stage 2: {len(train_records)} training studies, {len(val_loader.dataset)} validation studies, "
                f"fusion={config.fusion_variant}")

    def on_improvement(epoch: int, loss: float) -> None:
        save_checkpoint(checkpoint_path, model, config, stage=2, vocab_size=len(corpus.vocab))

    def on_epoch_end(epoch: int) -> None:
        if config.val_generation_limit == 0:
            return
        with torch.no_grad():
            score = validation_bleu4(model, corpus, config)
        if score is not None:
            logger.info(f"epoch {epoch} val BLEU-4={score:.4f}")

    save_checkpoint(checkpoint_path, model, config, stage=2, vocab_size=len(corpus.vocab))
    result = fit(model, model.generation_loss, stage2_parameter_groups(model, config), train_loader, val_loader,
                 config, config.stage2_epochs, on_improvement, TrainingLog(log_path), on_epoch_end)
    logger.info(f"✅ Stage 2 done: best loss {result.best_loss:.4f} at epoch {result.best_epoch}")
    return result

"""
Shared training loop for both stages.

AdamW, ReduceLROnPlateau on the monitored validation loss, early stopping, and
best-validation checkpointing. A non-finite loss or gradient aborts the run
after re-running the batch under a forward-hook watcher to name the first
module that produced NaN/Inf.
"""

import csv
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader

from priorrg.config import RunConfig, settings
from priorrg.corpus.dataset import StudyBatch
from priorrg.errors import NumericError
from priorrg.models.schemas import TrainingLogRow
from priorrg.numerics.guard import FiniteGuard

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "split", "loss", "lr", "seconds")

LossFn = Callable[[StudyBatch], torch.Tensor]


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch and pin torch to deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(settings.torch_threads)
    torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass
class TrainingResult:
    best_loss: float
    best_epoch: int
    epochs_run: int
    history: List[TrainingLogRow] = field(default_factory=list)


class TrainingLog:
    """CSV log with one row per (epoch, split)"""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        self.rows: List[TrainingLogRow] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow(LOG_FIELDS)

    def append(self, row: TrainingLogRow) -> None:
        self.rows.append(row)
        logger.info(f"epoch {row.epoch} {row.split}: loss={row.loss:.4f} lr={row.lr:.2e} ({row.seconds:.1f}s)")
        if self.path:
            with open(self.path, "a", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow([getattr(row, name) for name in LOG_FIELDS])


def diagnose_non_finite(model: nn.Module, loss_fn: LossFn, batch: StudyBatch, what: str) -> NumericError:
    """Replay the batch with every module hooked; the error names the first offender"""
    with torch.no_grad(), FiniteGuard(model) as guard:
        try:
            loss_fn(batch)
        except NumericError:
            pass
    where = guard.first_offender or "the loss computation"
    return NumericError(f"Non-finite {what} during training; first non-finite output in {where}")


def train_step(model: nn.Module, loss_fn: LossFn, batch: StudyBatch, optimizer: torch.optim.Optimizer,
               grad_clip_norm: float) -> float:
    """One optimiser step; returns the loss"""
    optimizer.zero_grad(set_to_none=True)
    try:
        loss = loss_fn(batch)
    except NumericError:
        raise diagnose_non_finite(model, loss_fn, batch, "forward pass")
    if not torch.isfinite(loss):
        raise diagnose_non_finite(model, loss_fn, batch, "loss")
    loss.backward()
    params = [p for group in optimizer.param_groups for p in group["params"] if p.grad is not None]
    if grad_clip_norm > 0:
        norm = torch.nn.utils.clip_grad_norm_(params, grad_clip_norm)
    else:
        norm = torch.stack([p.grad.norm() for p in params]).norm() if params else torch.tensor(0.0)
    if not torch.isfinite(norm):
        raise diagnose_non_finite(model, loss_fn, batch, "gradient")
    optimizer.step()
    return loss.item()


@torch.no_grad()
def evaluate_loss(model: nn.Module, loss_fn: LossFn, loader: DataLoader) -> float:
    """Mean batch loss weighted by batch size"""
    model.eval()
    total, count = 0.0, 0
    for batch in loader:
        try:
            loss = loss_fn(batch)
        except NumericError:
            raise diagnose_non_finite(model, loss_fn, batch, "validation forward pass")
        if not torch.isfinite(loss):
            raise diagnose_non_finite(model, loss_fn, batch, "validation loss")
        total += loss.item() * len(batch)
        count += len(batch)
    return total / count if count else float("nan")


def fit(model: nn.Module,
        loss_fn: LossFn,
        param_groups: List[Dict[str, object]],
        train_loader: DataLoader,
        val_loader: Optional[DataLoader],
        config: RunConfig,
        epochs: int,
        on_improvement: Callable[[int, float], None],
        log: TrainingLog,
        on_epoch_end: Optional[Callable[[int], None]] = None) -> TrainingResult:
    """
    Run up to `epochs` epochs. The monitored quantity is the validation loss,
    or the training loss when there is no validation data. `on_improvement`
    is called with (epoch, loss) whenever the monitored loss improves.
    """
    optimizer = torch.optim.AdamW(param_groups, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=config.scheduler_factor, patience=config.scheduler_patience
    )
    has_val = val_loader is not None and len(val_loader.dataset) > 0
    if not has_val:
        logger.warning("No validation studies; monitoring the training loss instead")

    best_loss, best_epoch, stale = float("inf"), 0, 0
    epoch = 0
    for epoch in range(1, epochs + 1):
        start = time.time()
        model.train()
        total, count = 0.0, 0
        for batch in train_loader:
            total += train_step(model, loss_fn, batch, optimizer, config.grad_clip_norm) * len(batch)
            count += len(batch)
        train_loss = total / max(count, 1)
        lr = optimizer.param_groups[0]["lr"]
        log.append(TrainingLogRow(epoch=epoch, split="train", loss=train_loss, lr=lr, seconds=time.time() - start))

        monitored = train_loss
        if has_val:
            start = time.time()
            monitored = evaluate_loss(model, loss_fn, val_loader)
            log.append(TrainingLogRow(epoch=epoch, split="val", loss=monitored, lr=lr, seconds=time.time() - start))
        if on_epoch_end:
            on_epoch_end(epoch)

        scheduler.step(monitored)
        if monitored < best_loss:
            best_loss, best_epoch, stale = monitored, epoch, 0
            on_improvement(epoch, monitored)
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                logger.info(f"Early stopping at epoch {epoch} (best epoch {best_epoch})")
                break

    return TrainingResult(best_loss=best_loss, best_epoch=best_epoch, epochs_run=epoch, history=log.rows)


def trainable(parameters: Iterable[nn.Parameter]) -> List[nn.Parameter]:
    return [p for p in parameters if p.requires_grad]

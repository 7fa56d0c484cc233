import csv

import pytest
import torch

from priorrg.corpus.dataset import StudyDataset, collate_studies, make_loader
from priorrg.errors import DataError, NumericError
from priorrg.modeling.priorrg import DECODER_MODULE, SHARED_MODULES, PriorRGModel
from priorrg.models.schemas import TrainingLogRow
from priorrg.services.checkpoint import load_checkpoint, read_checkpoint, restore, save_checkpoint
from priorrg.training.common import TrainingLog, evaluate_loss, seed_everything, train_step
from priorrg.training.stage1 import train_stage1
from priorrg.training.stage2 import build_stage2_model, stage2_parameter_groups, train_stage2

from conftest import toy_config


def val_alignment_loss(model, corpus, config):
    loader = make_loader(corpus, corpus.split("val"), config, config.stage1_batch_size)
    return evaluate_loss(model, lambda b: model.align(b).loss, loader)


# - stage 1 -
def test_stage1_checkpoint_reproduces_best_val_loss(corpus, tmp_path):
    config = toy_config()
    checkpoint = tmp_path / "stage1.safetensors"
    result = train_stage1(corpus, config, checkpoint, tmp_path / "stage1.log.csv")
    assert result.epochs_run == 1 and result.best_epoch == 1

    tensors, metadata = load_checkpoint(checkpoint, config, vocab_size=len(corpus.vocab), expected_stage=1)
    model = PriorRGModel(config, len(corpus.vocab))
    restore(model, tensors)
    assert val_alignment_loss(model, corpus, config) == result.best_loss
    assert metadata["fingerprint"] == config.fingerprint()


def test_zero_learning_rate_keeps_val_loss(corpus, tmp_path):
    config = toy_config(stage1_lr=0.0)
    seed_everything(config.seed)
    initial = val_alignment_loss(PriorRGModel(config, len(corpus.vocab)), corpus, config)
    result = train_stage1(corpus, config, tmp_path / "stage1.safetensors")
    assert result.best_loss == pytest.approx(initial, abs=1e-6)


def test_training_log_csv(corpus, tmp_path):
    log_path = tmp_path / "logs" / "stage1.log.csv"
    train_stage1(corpus, toy_config(stage1_epochs=2), tmp_path / "stage1.safetensors", log_path)
    with open(log_path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [(r["epoch"], r["split"]) for r in rows] == [("1", "train"), ("1", "val"), ("2", "train"), ("2", "val")]
    assert all(float(r["loss"]) > 0 for r in rows)


def test_training_log_in_memory_only():
    log = TrainingLog(None)
    log.append(TrainingLogRow(epoch=1, split="train", loss=1.0, lr=0.1, seconds=0.0))
    assert len(log.rows) == 1


# - stage 2 -
def test_stage2_without_epochs_keeps_stage1_weights(corpus, tmp_path):
    config = toy_config(stage2_epochs=0)
    stage1 = save_checkpoint(tmp_path / "stage1.safetensors", PriorRGModel(config, len(corpus.vocab)), config,
                             stage=1, vocab_size=len(corpus.vocab))
    stage2 = tmp_path / "stage2.safetensors"
    train_stage2(corpus, config, stage1, stage2)

    before, _ = read_checkpoint(stage1)
    after, metadata = read_checkpoint(stage2)
    assert metadata["stage"] == 2
    shared = [name for name in before if name.split(".")[0] in SHARED_MODULES]
    assert shared
    for name in shared:
        assert torch.equal(before[name], after[name]), name


def test_stage2_runs_one_epoch(corpus, tmp_path):
    config = toy_config()
    stage1 = save_checkpoint(tmp_path / "stage1.safetensors", PriorRGModel(config, len(corpus.vocab)), config,
                             stage=1, vocab_size=len(corpus.vocab))
    result = train_stage2(corpus, config, stage1, tmp_path / "stage2.safetensors", tmp_path / "stage2.log.csv")
    assert result.epochs_run == 1
    assert result.best_loss > 0


def test_generation_loss_overfits_one_batch(corpus):
    config = toy_config(d=32, d_enc=32, decoder_layers=2)
    seed_everything(config.seed)
    dataset = StudyDataset(corpus, corpus.split("all")[:2], config)
    batch = collate_studies([dataset[i] for i in range(len(dataset))])
    model = PriorRGModel(config, len(corpus.vocab))
    optimizer = torch.optim.AdamW(model.parameters(), lr=3e-3, weight_decay=0.0)

    epoch_means = []
    for _ in range(5):
        losses = [train_step(model, model.generation_loss, batch, optimizer, 1.0) for _ in range(150)]
        epoch_means.append(sum(losses) / len(losses))
    assert all(later < earlier for earlier, later in zip(epoch_means, epoch_means[1:]))
    with torch.no_grad():
        assert model.generation_loss(batch).item() < 0.1


def test_learning_rate_groups(corpus):
    config = toy_config(decoder_lr=1e-3, other_lr=1e-5)
    model = PriorRGModel(config, len(corpus.vocab))
    groups = {g["name"]: g for g in stage2_parameter_groups(model, config)}
    assert groups["decoder"]["lr"] == 1e-3
    assert groups["other"]["lr"] == 1e-5

    names = {id(p): name for name, p in model.named_parameters()}
    assert all(names[id(p)].startswith(f"{DECODER_MODULE}.") for p in groups["decoder"]["params"])
    assert not any(names[id(p)].startswith(f"{DECODER_MODULE}.") for p in groups["other"]["params"])
    assert len(groups["decoder"]["params"]) + len(groups["other"]["params"]) == len(names)


def test_random_init_variant_needs_no_stage1(corpus):
    model = build_stage2_model(corpus, toy_config(preset="variant-f", init_from_stage1=False), None)
    assert isinstance(model, PriorRGModel)
    with pytest.raises(DataError):
        build_stage2_model(corpus, toy_config(), None)


# - numeric failures -
def test_non_finite_loss_names_the_module(corpus, config, batch):
    model = PriorRGModel(config, len(corpus.vocab))
    with torch.no_grad():
        model.vision.patch_embed.weight.fill_(float("nan"))
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3)
    with pytest.raises(NumericError) as info:
        train_step(model, lambda b: model.align(b).loss, batch, optimizer, 1.0)
    assert "vision.patch_embed" in str(info.value.detail)
    assert info.value.exit_code == 4


def test_reruns_give_identical_checkpoints(corpus, tmp_path):
    config = toy_config()
    a, b = tmp_path / "a.safetensors", tmp_path / "b.safetensors"
    train_stage1(corpus, config, a)
    train_stage1(corpus, config, b)
    assert a.read_bytes() == b.read_bytes()

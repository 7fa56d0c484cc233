import json
from pathlib import Path

import pytest
import torch

from priorrg.config import RunConfig, load_run_config, parse_overrides, read_config_file
from priorrg.errors import CheckpointLoadError, ConfigError
from priorrg.modeling.priorrg import SHARED_MODULES, PriorRGModel
from priorrg.services.artifacts import atomic_write, timed, write_repro_record
from priorrg.services.checkpoint import checkpoint_config, load_checkpoint, read_checkpoint, restore, save_checkpoint

from conftest import toy_config

VOCAB_SIZE = 50
CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


# - configuration -
def test_defaults_are_valid():
    config = RunConfig()
    assert config.retrieval_k == [1, 3, 5]
    assert config.fusion_variant == "full"


def test_preset_sets_ablation_flags(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("preset=variant-b\nseed=3\n")
    config = load_run_config(path)
    assert config.preset == "variant-b"
    assert (config.use_clinical_context, config.use_prior_image, config.use_hidden_states) == (False, False, True)
    assert config.seed == 3


def test_overrides_win_over_file_and_preset(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("preset=variant-b\nd=32\n")
    config = load_run_config(path, ["d=16", "use_hidden_states=false", "retrieval_k=1,2"])
    assert config.d == 16
    assert config.use_hidden_states is False
    assert config.retrieval_k == [1, 2]


def test_preset_chosen_on_the_command_line():
    config = load_run_config(None, ["preset=last-only"])
    assert config.fusion_variant == "last_only"


def test_includes_are_read_first(tmp_path):
    (tmp_path / "base.env").write_text("seed=11\nd=32\n")
    (tmp_path / "child.env").write_text("include=base.env\nd=16\n")
    values = read_config_file(tmp_path / "child.env")
    assert values == {"seed": "11", "d": "16"}


def test_include_cycle_is_rejected(tmp_path):
    (tmp_path / "a.env").write_text("include=b.env\n")
    (tmp_path / "b.env").write_text("include=a.env\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "a.env")


@pytest.mark.parametrize("overrides", [
    ["d=7"],
    ["fusion_variant=sideways"],
    ["no_such_field=1"],
    ["preset=variant-z"],
    ["image_size=20"],
    ["train_fraction=0.8", "val_fraction=0.3"],
])
def test_invalid_configuration(overrides):
    with pytest.raises(ConfigError):
        load_run_config(None, overrides)


def test_malformed_override_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_overrides(["seed"])
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.env")


def test_fingerprints():
    a, b = toy_config(), toy_config()
    assert a.fingerprint() == b.fingerprint()
    reseeded = toy_config(seed=8)
    assert reseeded.fingerprint() != a.fingerprint()
    assert reseeded.structural_fingerprint() == a.structural_fingerprint()
    assert toy_config(d=16).structural_fingerprint() != a.structural_fingerprint()


def test_resolve_uses_artifact_root(artifact_root):
    config = toy_config()
    assert config.resolve("checkpoints/x.safetensors") == artifact_root / "checkpoints" / "x.safetensors"
    assert config.resolve(str(artifact_root / "abs")) == artifact_root / "abs"


# - checkpoints -
def test_round_trip_restores_every_tensor(tmp_path):
    config = toy_config()
    model = PriorRGModel(config, VOCAB_SIZE)
    path = save_checkpoint(tmp_path / "ckpt.safetensors", model, config, stage=1, vocab_size=VOCAB_SIZE)

    tensors, metadata = load_checkpoint(path, config, vocab_size=VOCAB_SIZE, expected_stage=1)
    fresh = PriorRGModel(config, VOCAB_SIZE)
    restore(fresh, tensors)
    for (name, a), (_, b) in zip(model.state_dict().items(), fresh.state_dict().items()):
        assert torch.equal(a, b), name
    assert metadata["fingerprint"] == config.fingerprint()
    assert checkpoint_config(metadata) == config


def test_partial_restore_touches_only_named_modules(tmp_path):
    config = toy_config()
    source = PriorRGModel(config, VOCAB_SIZE)
    path = save_checkpoint(tmp_path / "ckpt.safetensors", source, config, stage=1, vocab_size=VOCAB_SIZE)
    target = PriorRGModel(config, VOCAB_SIZE)
    before = target.generator.token_embed.weight.clone()
    restore(target, read_checkpoint(path)[0], SHARED_MODULES)
    assert torch.equal(target.vision.patch_embed.weight, source.vision.patch_embed.weight)
    assert torch.equal(target.generator.token_embed.weight, before)


def test_saving_twice_gives_identical_bytes(tmp_path):
    config = toy_config()
    model = PriorRGModel(config, VOCAB_SIZE)
    a = save_checkpoint(tmp_path / "a.safetensors", model, config, stage=2, vocab_size=VOCAB_SIZE)
    b = save_checkpoint(tmp_path / "b.safetensors", model, config, stage=2, vocab_size=VOCAB_SIZE)
    assert a.read_bytes() == b.read_bytes()


def test_structure_stage_and_vocab_mismatches(tmp_path):
    config = toy_config()
    path = save_checkpoint(tmp_path / "ckpt.safetensors", PriorRGModel(config, VOCAB_SIZE), config,
                           stage=1, vocab_size=VOCAB_SIZE)
    with pytest.raises(CheckpointLoadError) as info:
        load_checkpoint(path, toy_config(d=16))
    assert info.value.detail.endswith("(differs in: d)")
    with pytest.raises(CheckpointLoadError) as info:
        load_checkpoint(path, toy_config(d=16, heads=4, n_latents=2))
    assert "heads" in info.value.detail and "n_latents" in info.value.detail
    with pytest.raises(CheckpointLoadError):
        load_checkpoint(path, config, expected_stage=2)
    with pytest.raises(CheckpointLoadError):
        load_checkpoint(path, config, vocab_size=VOCAB_SIZE + 1)
    # non-structural differences load fine
    load_checkpoint(path, toy_config(seed=99, stage1_lr=0.5))


def test_unreadable_checkpoints(tmp_path):
    with pytest.raises(CheckpointLoadError):
        read_checkpoint(tmp_path / "missing.safetensors")
    garbage = tmp_path / "garbage.safetensors"
    garbage.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointLoadError):
        read_checkpoint(garbage)


# - artifacts -
def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    atomic_write(target, "first")
    atomic_write(target, b"second")
    assert target.read_text() == "second"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_repro_record_sidecar(tmp_path):
    config = toy_config()
    artifact = tmp_path / "model.safetensors"
    path = write_repro_record(artifact, "pretrain", config, 1.23456)
    assert path.name == "model.safetensors.repro.json"
    record = json.loads(path.read_text())
    assert record["command"] == "pretrain"
    assert record["fingerprint"] == config.fingerprint()
    assert record["seed"] == 7
    assert record["wall_seconds"] == 1.235
    assert record["commit"]


def test_timed_reports_elapsed_seconds():
    with timed("noop") as info:
        pass
    assert info["seconds"] >= 0.0
    with pytest.raises(RuntimeError):
        with timed("boom"):
            raise RuntimeError("boom")


@pytest.mark.parametrize("name", ["desk.env", "smoke.env"])
def test_shipped_config_files_load(name):
    config = load_run_config(CONFIG_DIR / name)
    assert config.seed == 1234
    assert config.retrieval_k[0] == 1

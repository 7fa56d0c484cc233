"""
safetensors checkpoints.

All provenance lives in a single metadata entry holding canonical JSON, so
the archive bytes depend only on the tensors and the config.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import torch
import torch.nn as nn
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save

from priorrg.config import STRUCTURAL_FIELDS, RunConfig, config_from_json
from priorrg.errors import CheckpointLoadError, ConfigError
from priorrg.services.artifacts import atomic_write

logger = logging.getLogger(__name__)

METADATA_KEY = "priorrg"


def save_checkpoint(path: Path, model: nn.Module, config: RunConfig, stage: int, vocab_size: int) -> Path:
    """Float32 safetensors file with the run config and stage in its metadata"""
    tensors = {name: t.detach().to(torch.float32).contiguous().clone() for name, t in model.state_dict().items()}
    metadata = {
        "fingerprint": config.fingerprint(),
        "structural_fingerprint": config.structural_fingerprint(),
        "config": config.model_dump(),
        "stage": stage,
        "vocab_size": vocab_size,
    }
    payload = save(tensors, metadata={METADATA_KEY: json.dumps(metadata, sort_keys=True, separators=(",", ":"))})
    atomic_write(Path(path), payload)
    logger.info(f"✅ Saved stage {stage} checkpoint to {path}")
    return Path(path)


def read_checkpoint(path: Path) -> Tuple[Dict[str, torch.Tensor], Dict[str, object]]:
    """Raw tensors and metadata, no compatibility checks"""
    path = Path(path)
    if not path.exists():
        raise CheckpointLoadError(f"Checkpoint not found: {path}")
    try:
        with safe_open(str(path), framework="pt") as f:
            raw = (f.metadata() or {}).get(METADATA_KEY)
        tensors = load_file(str(path))
    except (SafetensorError, OSError) as e:
        raise CheckpointLoadError(f"Unreadable checkpoint {path}: {e}") from e
    if raw is None:
        raise CheckpointLoadError(f"Checkpoint {path} carries no provenance metadata")
    return tensors, json.loads(raw)


def checkpoint_config(metadata: Dict[str, object]) -> RunConfig:
    """The run configuration a checkpoint was saved under"""
    if "config" not in metadata:
        raise CheckpointLoadError("Checkpoint carries no stored configuration")
    try:
        return config_from_json(json.dumps(metadata["config"]))
    except ConfigError as e:
        raise CheckpointLoadError(f"Checkpoint carries an invalid configuration: {e.detail}") from e


def load_checkpoint(path: Path, config: RunConfig, vocab_size: Optional[int] = None,
                    expected_stage: Optional[int] = None) -> Tuple[Dict[str, torch.Tensor], Dict[str, object]]:
    """Read a checkpoint and verify it was built for the same structure as `config`"""
    tensors, metadata = read_checkpoint(path)
    if metadata.get("structural_fingerprint") != config.structural_fingerprint():
        stored = checkpoint_config(metadata)
        changed = [name for name in STRUCTURAL_FIELDS if getattr(stored, name) != getattr(config, name)]
        raise CheckpointLoadError(f"Checkpoint {path} was built for a different model structure "
                                  f"(differs in: {', '.join(changed)})")
    if vocab_size is not None and metadata.get("vocab_size") != vocab_size:
        raise CheckpointLoadError(f"Checkpoint {path} has vocabulary size {metadata.get('vocab_size')}, "
                                  f"dataset has {vocab_size}")
    if expected_stage is not None and metadata.get("stage") != expected_stage:
        raise CheckpointLoadError(f"Expected a stage {expected_stage} checkpoint, {path} is stage {metadata.get('stage')}")
    return tensors, metadata


def restore(model: nn.Module, tensors: Dict[str, torch.Tensor], prefixes: Optional[Iterable[str]] = None) -> None:
    """Copy checkpoint tensors into the model, optionally only under the given module prefixes"""
    state = model.state_dict()
    wanted = [name for name in state
              if prefixes is None or any(name == p or name.startswith(f"{p}.") for p in prefixes)]
    missing = [name for name in wanted if name not in tensors]
    if missing:
        raise CheckpointLoadError(f"Checkpoint lacks {len(missing)} tensors, e.g. {missing[0]}")
    with torch.no_grad():
        for name in wanted:
            if tensors[name].shape != state[name].shape:
                raise CheckpointLoadError(f"Tensor {name} has shape {tuple(tensors[name].shape)}, "
                                          f"model expects {tuple(state[name].shape)}")
            state[name].copy_(tensors[name])
    logger.info(f"Restored {len(wanted)} tensors")

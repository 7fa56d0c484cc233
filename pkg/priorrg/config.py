import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Set

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from priorrg.errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-level settings read from the environment / .env"""

    model_config = SettingsConfigDict(env_prefix="PRIORRG_", env_file=".env", extra="ignore")

    artifact_root: Path = Path("./artifacts")
    log_level: str = "INFO"
    torch_threads: int = 1
    # Thread pool for per-patient corpus generation
    workers: int = 1


settings = Settings()


# Fields that decide parameter shapes; a checkpoint only loads into a config
# agreeing on all of them.
STRUCTURAL_FIELDS = (
    "image_size",
    "patch_size",
    "d",
    "d_enc",
    "heads",
    "ffn_mult",
    "vision_layers",
    "text_layers",
    "max_text_len",
    "stf_blocks",
    "n_latents",
    "perceiver_depth",
    "cbam_reduction",
    "decoder_layers",
    "max_new_tokens",
    "use_hidden_states",
)

FUSION_VARIANTS = ("full", "last_only", "fine2coarse")


class RunConfig(BaseModel):
    """Every hyperparameter of a run. Desk-scale defaults; full-scale values noted in comments."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Reproducibility
    seed: int = 1234
    preset: str = "full"

    # Corpus
    n_patients: int = Field(500, ge=0)
    visits_per_patient: int = Field(4, ge=0)
    image_size: int = 64
    prior_rate: float = Field(0.605, ge=0.0, le=1.0)  # real-corpus train rate
    indication_rate: float = Field(0.664, ge=0.0, le=1.0)  # real-corpus train rate
    history_rate: float = Field(0.306, ge=0.0, le=1.0)  # real-corpus train rate
    train_fraction: float = Field(0.7, gt=0.0, lt=1.0)
    val_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    abnormal_only: bool = False

    # Encoders
    d: int = 64  # full scale: 768
    d_enc: int = 64
    patch_size: int = 8
    vision_layers: int = Field(3, ge=1)
    text_layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    ffn_mult: int = 4
    max_text_len: int = 48

    # Fusion
    stf_blocks: int = Field(3, ge=1)  # full scale: 3
    n_latents: int = Field(16, ge=1)  # full scale: 128
    perceiver_depth: int = Field(1, ge=1)
    cbam_reduction: int = 4  # CBAM default 16
    init_inv_tau: float = 14.0

    # Decoder
    decoder_layers: int = Field(2, ge=1)
    max_new_tokens: int = Field(40, ge=1)  # full scale: K=100
    beam_size: int = Field(3, ge=1)  # full scale: 3

    # Stage 1
    stage1_epochs: int = Field(30, ge=0)  # full scale: 30
    stage1_batch_size: int = Field(32, ge=1)  # full scale: 32
    stage1_lr: float = Field(1e-3, ge=0.0)  # full scale: 5e-5

    # Stage 2
    stage2_epochs: int = Field(30, ge=0)  # full scale: 30
    stage2_batch_size: int = Field(16, ge=1)  # full scale: 16
    decoder_lr: float = Field(1e-3, ge=0.0)  # full scale: 5e-5
    other_lr: float = Field(1e-4, ge=0.0)  # full scale: 5e-6
    val_generation_limit: int = Field(64, ge=0)

    # Optimisation shared by both stages
    weight_decay: float = Field(0.01, ge=0.0)
    grad_clip_norm: float = Field(1.0, ge=0.0)
    scheduler_patience: int = Field(5, ge=0)  # full scale: 5
    scheduler_factor: float = Field(0.5, gt=0.0, lt=1.0)
    early_stop_patience: int = Field(15, ge=1)  # full scale: 15

    # Ablation switches
    use_prior_image: bool = True
    use_clinical_context: bool = True
    use_hidden_states: bool = True
    fusion_variant: str = "full"
    freeze_vision: bool = False
    init_from_stage1: bool = True

    # Evaluation
    retrieval_per_class: int = Field(40, ge=1)  # full scale: 200
    retrieval_k: List[int] = Field(default_factory=lambda: [1, 3, 5])
    retrieval_split: str = "test"
    rouge_beta: float = 1.2

    # Artifact paths, relative to settings.artifact_root
    dataset_dir: str = "dataset"
    stage1_checkpoint: str = "checkpoints/stage1.safetensors"
    stage2_checkpoint: str = "checkpoints/stage2.safetensors"
    generations_file: str = "outputs/generations.jsonl"
    metrics_file: str = "outputs/metrics"
    retrieval_file: str = "outputs/retrieval"

    @field_validator("fusion_variant")
    @classmethod
    def validate_fusion_variant(cls, v: str) -> str:
        if v not in FUSION_VARIANTS:
            raise ValueError(f"fusion_variant must be one of {', '.join(FUSION_VARIANTS)}")
        return v

    @field_validator("retrieval_k", mode="before")
    @classmethod
    def parse_retrieval_k(cls, v):
        if isinstance(v, str):
            return [int(k) for k in v.split(",") if k.strip()]
        return v

    @model_validator(mode="after")
    def check_geometry(self) -> "RunConfig":
        if self.d % self.heads or self.d_enc % self.heads:
            raise ValueError("d and d_enc must be divisible by heads")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.d_enc % self.cbam_reduction:
            raise ValueError("cbam_reduction must divide d_enc")
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ValueError("train_fraction + val_fraction must leave room for a test split")
        return self

    def _canonical(self, fields: Optional[tuple] = None) -> str:
        data = self.model_dump()
        if fields is not None:
            data = {k: data[k] for k in fields}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        """Stable hash over every field"""
        return hashlib.sha256(self._canonical().encode("utf-8")).hexdigest()

    def structural_fingerprint(self) -> str:
        """Stable hash over the shape-determining fields only"""
        return hashlib.sha256(self._canonical(STRUCTURAL_FIELDS).encode("utf-8")).hexdigest()

    def resolve(self, relative: str) -> Path:
        """Artifact path under the configured artifact root"""
        path = Path(relative)
        return path if path.is_absolute() else settings.artifact_root / path


# Ablation rows keyed by preset name
ABLATION_PRESETS: Dict[str, Dict[str, object]] = {
    "full": {},
    "variant-a": {"use_clinical_context": False, "use_prior_image": False, "use_hidden_states": False},
    "variant-b": {"use_clinical_context": False, "use_prior_image": False, "use_hidden_states": True},
    "variant-c": {"use_clinical_context": True, "use_prior_image": False, "use_hidden_states": False},
    "variant-d": {"use_clinical_context": True, "use_prior_image": False, "use_hidden_states": True},
    "variant-e": {"use_clinical_context": True, "use_prior_image": True, "use_hidden_states": False},
    "variant-f": {"init_from_stage1": False},
    "last-only": {"fusion_variant": "last_only"},
    "fine2coarse": {"fusion_variant": "fine2coarse"},
}


def read_config_file(path: Path, _seen: Optional[Set[Path]] = None) -> Dict[str, str]:
    """Read a flat key=value file, expanding `include=` lines first"""
    path = Path(path).resolve()
    seen = _seen or set()
    if path in seen:
        raise ConfigError(f"Config include cycle at {path}")
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    seen = seen | {path}

    values: Dict[str, str] = {}
    raw = dotenv_values(path)
    include = raw.pop("include", None)
    if include:
        for part in include.split(","):
            values.update(read_config_file(path.parent / part.strip(), seen))
    values.update({k: v for k, v in raw.items() if v is not None})
    return values


def parse_overrides(pairs: List[str]) -> Dict[str, str]:
    """Split `key=value` pairs from the command line"""
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"Override must be key=value, got '{pair}'")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_run_config(path: Optional[Path] = None, overrides: Optional[List[str]] = None) -> RunConfig:
    """Load file values, then preset flags, then --set overrides"""
    file_values: Dict[str, str] = read_config_file(path) if path else {}
    override_values = parse_overrides(overrides or [])
    preset = override_values.get("preset", file_values.get("preset", "full"))

    if preset not in ABLATION_PRESETS:
        raise ConfigError(f"Unknown preset '{preset}'. Available: {', '.join(ABLATION_PRESETS)}")
    merged: Dict[str, object] = dict(file_values)
    merged.update(ABLATION_PRESETS[preset])
    merged.update(override_values)
    merged["preset"] = preset

    try:
        config = RunConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    logger.info(f"Loaded config (preset={config.preset}, fingerprint={config.fingerprint()[:12]})")
    return config


def config_from_json(text: str) -> RunConfig:
    try:
        return RunConfig(**json.loads(text))
    except (ValidationError, json.JSONDecodeError) as e:
        raise ConfigError(f"Stored configuration is invalid: {e}") from e

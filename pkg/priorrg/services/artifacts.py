import json
import logging
import os
import subprocess
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

from priorrg.config import RunConfig
from priorrg.models.schemas import ReproRecord

logger = logging.getLogger(__name__)


@contextmanager
def timed(label: str) -> Iterator[dict]:
    """Log start, outcome and elapsed seconds; the yielded dict carries `seconds` afterwards"""
    info = {"seconds": 0.0}
    start = time.time()
    logger.info(f"Started: {label}")
    try:
        yield info
    except Exception:
        info["seconds"] = time.time() - start
        logger.error(f"❌ {label} failed after {info['seconds']:.2f}s")
        raise
    info["seconds"] = time.time() - start
    logger.info(f"✅ {label} finished in {info['seconds']:.2f}s")


def atomic_write(path: Path, data: Union[str, bytes]) -> None:
    """Write to a temp file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def commit_identifier() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5, check=True)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_repro_record(artifact: Path, command: str, config: RunConfig, wall_seconds: float) -> Path:
    """Sidecar `<artifact>.repro.json` describing how the artifact was produced"""
    record = ReproRecord(
        command=command,
        artifact=str(artifact),
        config=config.model_dump(),
        fingerprint=config.fingerprint(),
        seed=config.seed,
        commit=commit_identifier(),
        wall_seconds=round(wall_seconds, 3),
    )
    path = Path(f"{artifact}.repro.json")
    atomic_write(path, json.dumps(record.model_dump(), sort_keys=True, indent=2) + "\n")
    return path

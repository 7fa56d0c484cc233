import logging
from pathlib import Path

from priorrg.config import RunConfig
from priorrg.corpus.generator import generate_from_config
from priorrg.services.artifacts import timed, write_repro_record

logger = logging.getLogger(__name__)


def cmd_synth(config: RunConfig) -> Path:
    """Generate the synthetic corpus into the configured dataset directory"""
    out_dir = config.resolve(config.dataset_dir)
    with timed("synth") as clock:
        summary = generate_from_config(config, out_dir)
    logger.info(f"Splits: {summary.split_counts}")
    write_repro_record(out_dir, "synth", config, clock["seconds"])
    return out_dir

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from priorrg.commands import COMMANDS
from priorrg.config import load_run_config, settings
from priorrg.errors import PriorRGError

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priorrg",
        description="Prior-guided radiology report generation on a synthetic longitudinal corpus",
    )
    parser.add_argument("command", choices=list(COMMANDS), help="Pipeline step to run")
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config value (repeatable)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, args.overrides)
        artifact = COMMANDS[args.command](config)
        logger.info(f"✅ {args.command} wrote {artifact}")
        return 0
    except PriorRGError as e:
        logger.error(f"❌ {args.command}: {e.detail}")
        return e.exit_code
    except Exception as e:
        # Global exception handler
        logger.exception(f"❌ Unexpected error in {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

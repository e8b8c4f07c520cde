"""
molprop
Command-line entry point
"""

import logging
import sys

import config
from cli.commands import run

# Configure logging
logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main() -> int:
    logger.debug(f"{config.APP_NAME} {config.APP_VERSION}")
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())

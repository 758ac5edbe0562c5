#!/usr/bin/env python3
"""
Calibration Toolkit Runner
Loads the environment, configures logging and dispatches to the CLI
"""

import sys
import os
import logging
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file before Config reads them
env_path = Path(__file__).parent / '.env'
load_dotenv(dotenv_path=env_path)

from config import Config  # noqa: E402
from cli import main as cli_main  # noqa: E402

# Configure logging
handlers = [logging.StreamHandler(sys.stdout)]
if Config.LOG_DIR:
    os.makedirs(Config.LOG_DIR, exist_ok=True)
    handlers.append(logging.FileHandler(os.path.join(Config.LOG_DIR, 'gpcal.log')))

logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=handlers
)

logger = logging.getLogger(__name__)


def main():
    """Main entry point"""
    logger.info("=" * 60)
    logger.info("Calibration Toolkit Starting")
    logger.info("=" * 60)

    try:
        code = cli_main(sys.argv[1:])
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        code = 130

    sys.exit(code)


if __name__ == '__main__':
    main()

import logging
import os
import sys

from dotenv import load_dotenv

from api import build_parser, dispatch, init_commands
from core.utils import setup_error_logging
from services.experiment_runner import ExperimentRunner


# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


def main(argv=None) -> int:
    # Set up logging; stdout is reserved for the JSON envelope
    logging.basicConfig(
        level=os.getenv('APPROX_SENSE_LOG_LEVEL', 'INFO').upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    setup_error_logging()

    experiment_runner = ExperimentRunner()
    parser = build_parser()
    init_commands(parser, experiment_runner)
    return dispatch(parser, experiment_runner, argv)


if __name__ == "__main__":
    sys.exit(main())

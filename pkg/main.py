"""Main entry point for the knowledge-spillover solver CLI."""

import sys

from dotenv import load_dotenv

load_dotenv()

from runner.cli_runner import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())

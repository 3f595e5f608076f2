"""Allow running the solver as a module: python -m runner <command> [options]"""
import sys

from runner.cli_runner import main

if __name__ == "__main__":
    sys.exit(main())

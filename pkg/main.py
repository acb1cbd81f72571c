import sys

from runner.cli import main

if __name__ == "__main__":
    # e.g. python main.py simulate --case ieee9 --plan line_5_7
    sys.exit(main())

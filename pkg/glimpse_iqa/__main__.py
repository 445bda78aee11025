"""Run the command line with `python -m glimpse_iqa`."""
import sys

from .cli import main

sys.exit(main())

import sys

from singhyp.cli import main

sys.exit(main())

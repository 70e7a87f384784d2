import sys

from bscoal.cli import main

sys.exit(main())

import sys

from simhra.cli import main

sys.exit(main())

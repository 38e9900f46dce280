import sys

from eclab.cli import main

sys.exit(main())

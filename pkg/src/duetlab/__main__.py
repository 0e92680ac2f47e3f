import sys

from duetlab.cli import main

sys.exit(main())

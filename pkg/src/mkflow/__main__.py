import sys

from mkflow.cli import main

sys.exit(main())

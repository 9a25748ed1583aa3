import sys

from carve.pipeline.cli import main

sys.exit(main())

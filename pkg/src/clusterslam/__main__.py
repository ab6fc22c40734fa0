"""Allow ``python -m clusterslam``."""

import sys

from .cli import main

sys.exit(main())

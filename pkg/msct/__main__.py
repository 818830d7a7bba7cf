import sys

from msct.cli import main

sys.exit(main())

import sys

from selfonn.cli import main

sys.exit(main())

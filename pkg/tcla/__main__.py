import sys

from tcla.cli import main

sys.exit(main())

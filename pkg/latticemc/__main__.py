import sys

from latticemc.cli import main

sys.exit(main())

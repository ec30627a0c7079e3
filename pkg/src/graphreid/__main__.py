import sys

from graphreid.cli import main

sys.exit(main())

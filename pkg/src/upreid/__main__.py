import sys

from upreid.cli import main

sys.exit(main())

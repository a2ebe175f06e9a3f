import sys

from advsgm.cli import main

sys.exit(main())

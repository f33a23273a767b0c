import sys

from catgrad.cli import main

sys.exit(main())

import sys

from ncgshape.cli import main

sys.exit(main())

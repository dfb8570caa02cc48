import sys

from priornet.cli import main

sys.exit(main())

import sys

from hafuse.cli import main

sys.exit(main())

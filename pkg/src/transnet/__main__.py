import sys

from transnet.app.cli import main

sys.exit(main())

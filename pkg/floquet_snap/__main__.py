import sys

from floquet_snap.cli import main

sys.exit(main())

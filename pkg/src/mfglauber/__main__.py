import sys
from mfglauber.cli import main

sys.exit(main())

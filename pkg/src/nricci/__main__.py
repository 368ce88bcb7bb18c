import sys

from nricci.cli import main

sys.exit(main())

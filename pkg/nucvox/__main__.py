import sys

from nucvox.main import main

sys.exit(main())

import sys

from onsetnet.main import main

sys.exit(main())

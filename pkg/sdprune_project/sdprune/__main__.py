import sys

from sdprune.main import main

sys.exit(main())

import sys

from latentanon.cli import main

sys.exit(main())

from molalign.cli import main
import sys

sys.exit(main())

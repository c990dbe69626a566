import sys

from sampled_lm.main import main

sys.exit(main())

import sys

from recode_runner import main

sys.exit(main(sys.argv))

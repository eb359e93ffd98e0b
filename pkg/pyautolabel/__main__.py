import sys

from pyautolabel import main

sys.exit(main())

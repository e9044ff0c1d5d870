"""Average collided subframes per MCOT at 8 ms, RSF 1 and 4, both engines.

    python3 scripts/collided_subframes_8ms.py [--out results/collided_table] [extra laacoex flags]
"""

import sys

from laacoex.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out" not in args:
        args += ["--out", "results/collided_table"]
    sys.exit(main(["collided-table", "--slots", "100100000", "--cache", "results/cache", *args]))

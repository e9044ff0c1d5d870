"""Simulated mean overlap split z2 over T_WiFi for 8 and 10 ms MCOTs.

    python3 scripts/overlap_split.py [--out results/z2_table] [extra laacoex flags]
"""

import sys

from laacoex.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out" not in args:
        args += ["--out", "results/z2_table"]
    sys.exit(main(["z2-table", "--slots", "100100000", *args]))

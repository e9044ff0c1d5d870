"""Full sweep with both engines, then per-figure CSVs.

    python3 scripts/figure_data.py [--out results/sweep] [--slots N]

The sweep covers 8 and 10 ms MCOTs, RSF 1 and the last eligible RSF, and the
five default T_WiFi values. Figure CSVs land in ``<out>/figures``.
"""

import argparse
import sys
from pathlib import Path

from laacoex.cli import main

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("results/sweep"))
    parser.add_argument("--slots", default="100100000")
    opts, rest = parser.parse_known_args()
    status = main(["sweep", "--engines", "analytic,simulation", "--slots", opts.slots,
                   "--cache", "results/cache", "--out", str(opts.out), *rest])
    if status == 1:
        sys.exit(status)
    sys.exit(main(["figure", "all", "--results", str(opts.out), "--out", str(opts.out / "figures")]) or status)

"""Seconds-scale cross-check of both engines on a small configuration.

    python3 scripts/desk_compare.py [--out results/desk] [--t-wifi 3,6,12]

With a 20-slot MCOT the chain's approximations hold for short packets.  At
T_WiFi = 12 node H's collision probability is off by about 0.1 and the
command exits with status 2.
"""

import sys

from laacoex.cli import main

DESK = dict(cw_min=4, m=1, n_sf=4, sf_slot=5, rsf=1, t_wifi=3)

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out" not in args:
        args += ["--out", "results/desk"]
    if "--t-wifi" not in args:
        args += ["--t-wifi", "3,6"]
    overrides = [f"--set={k}={v}" for k, v in DESK.items()]
    sys.exit(main(["compare", *overrides, "--tol-profile", "loose", *args]))

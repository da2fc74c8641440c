#!/usr/bin/env python3
"""Warm the trajectory cache behind the acceptance checks.

The acceptance tests fetch their long runs through the shared registry; any
run missing from the cache is computed on the spot, which turns a test
session into hours of integration. Running this script first (once) moves
that cost out of pytest. Sets:

    desk  eight (3,8,8) arms, about an hour total
    conv  six (4,10,10) arms, about four hours
    long  extended horizons, about an hour

The decoherence-lifetime comparison only needs the slow-decay arm at the
extended horizon when the fast-decay arm actually crosses half its peak, so
that run is skipped unless the crossing is present.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from transmech.runsets import (  # noqa: E402
    CONV_RUNS, DESK_RUNS, LONG_RUNS, fetch, get, half_peak_crossing,
)

DEFAULT_CACHE = os.path.join(os.path.dirname(__file__), "..", "tests", "_runcache")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("sets", nargs="*", default=["desk"],
                    choices=["desk", "conv", "long", "all"],
                    help="which run sets to warm (default: desk)")
    ap.add_argument("--cache-dir", default=DEFAULT_CACHE)
    args = ap.parse_args()

    wanted = set(args.sets)
    if "all" in wanted:
        wanted = {"desk", "conv", "long"}
    specs = []
    if "desk" in wanted:
        specs += list(DESK_RUNS)
    if "conv" in wanted:
        specs += list(CONV_RUNS)
    if "long" in wanted:
        specs += [s for s in LONG_RUNS if s.tag != "long_gt005"]

    failed = []
    for spec in specs:
        print(f"--- {spec.tag}  dims={spec.dims}  horizon={spec.horizon_tau:g} tau", flush=True)
        try:
            out = fetch(spec, args.cache_dir, progress=True)
        except Exception as exc:  # keep warming the other arms
            print(f"    FAILED: {exc}", flush=True)
            failed.append(spec.tag)
            continue
        print(f"    EN(final) = {out['EN_bits'][-1]:.4f} bits, "
              f"wall = {out['wall_time']:.0f} s", flush=True)
    if failed:
        print(f"!!! {len(failed)} arm(s) not cached: {', '.join(failed)}", flush=True)

    if "long" in wanted:
        base = fetch(get("long_baseline"), args.cache_dir)
        t_half = half_peak_crossing(base["times"], base["EN_bits"], base["tau"])
        if t_half is not None:
            print(f"--- fast-decay arm crosses half-peak at {t_half:.1f} tau; "
                  "warming the slow-decay arm", flush=True)
            fetch(get("long_gt005"), args.cache_dir, progress=True)
        else:
            print("--- no half-peak crossing in the fast-decay arm; "
                  "slow-decay extension not needed", flush=True)


if __name__ == "__main__":
    main()

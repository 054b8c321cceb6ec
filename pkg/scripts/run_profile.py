#!/usr/bin/env python3
"""Runtime and peak-memory profile of the detector across token counts.

Scores random token sequences spanning two decades of length against a toy
provider and prints one line per point; optionally writes the points as line
records for plotting.

Usage: python3 scripts/run_profile.py [--lengths 16,64,256,1600,4096]
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from statguard.backends import IntTokenizer, ToyLM, ToyProvider
from statguard.calibration import Detector
from statguard.evaluation import profile_runtime
from statguard.witness import identity_witness


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lengths", default="16,64,256,1600,4096",
                        help="comma-separated token counts, spanning >= 2 decades")
    parser.add_argument("--vocab", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="optional line-record output path")
    args = parser.parse_args()

    lengths = [int(x) for x in args.lengths.split(",")]
    rng = np.random.default_rng(args.seed)
    model = ToyLM.random(args.vocab, 2, rng)
    provider = ToyProvider(model, IntTokenizer(args.vocab))
    detector = Detector(identity_witness(), provider.provider_id)

    seqs = [list(rng.integers(0, args.vocab, size=n)) for n in lengths]
    points = profile_runtime(detector, provider, seqs)
    prev = None
    for count, seconds, peak in points:
        note = ""
        if prev and prev[0] > 0 and count == 2 * prev[0]:
            note = f"  (x{seconds / max(prev[1], 1e-12):.2f} vs half length)"
        print(f"tokens={count:>6} seconds={seconds:.6f} peak_bytes={peak:>10}{note}")
        prev = (count, seconds)

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for count, seconds, peak in points:
                fh.write(json.dumps({
                    "record": "runtime", "tokens": count,
                    "seconds": seconds, "peak_bytes": peak,
                }) + "\n")
        print(f"points -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

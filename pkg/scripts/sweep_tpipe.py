"""Sweep T-Pipe over p and m, writing a CSV of simulated vs closed-form values.

    python3 scripts/sweep_tpipe.py --p 3 24 --out tpipe_sweep.csv
"""
import argparse
import csv
import sys

from tpipe_sim import PipelineConfig, build_schedule, simulate
from tpipe_sim.analytic import bwd_interval, fwd_interval, tpipe_peaks
from tpipe_sim.core import rational_str

FIELDS = ("p", "m", "total_time", "bubble_ratio", "chunk1_peak", "chunk1_formula",
          "chunk2_peak", "chunk2_formula", "fwd_interval", "fwd_formula",
          "bwd_interval", "bwd_formula")


def row(p: int, m: int) -> dict:
    cfg = PipelineConfig(p=p, m=m, v=2, t_fwd=2 * p)
    _, _, rep = simulate(build_schedule(cfg, "tpipe"), cfg)
    c1, c2, _ = tpipe_peaks(p)
    return {
        "p": p, "m": m,
        "total_time": rational_str(rep.total_time),
        "bubble_ratio": rational_str(rep.bubble_ratio),
        "chunk1_peak": rep.chunk_peak_blocks[0][1], "chunk1_formula": c1,
        "chunk2_peak": rep.chunk_peak_blocks[0][2], "chunk2_formula": c2,
        "fwd_interval": rational_str(rep.fwd_interval), "fwd_formula": fwd_interval(p),
        "bwd_interval": rational_str(rep.bwd_interval), "bwd_formula": bwd_interval(p),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", nargs=2, type=int, default=(3, 16), metavar=("LO", "HI"))
    ap.add_argument("--m-factors", nargs="+", type=int, default=(1, 2))
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    rows = [row(p, k * p) for p in range(args.p[0], args.p[1] + 1) for k in args.m_factors]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())

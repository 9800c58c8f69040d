"""Finite-difference gradient suite over every differentiable op plus the end-to-end loss."""

import argparse
import sys
import time

from texavatar.gradsuite import run_suite

p = argparse.ArgumentParser()
p.add_argument("--seed", type=int, default=0)
p.add_argument("--eps", type=float, default=1e-3)
p.add_argument("--rtol", type=float, default=1e-2)
args = p.parse_args()

t0 = time.perf_counter()
entries = run_suite(seed=args.seed, eps=args.eps, rtol=args.rtol)
for e in entries:
    print(f"{'ok  ' if e.ok else 'FAIL'} {e.result.summary()}  [{e.rejected} kinked candidates skipped]")
print(f"{sum(e.ok for e in entries)}/{len(entries)} passed in {time.perf_counter() - t0:.1f}s")
sys.exit(0 if all(e.ok for e in entries) else 1)

"""Learn textures only, with the UV maps frozen at oracle values.

    python3 scripts/texture_recovery.py --out results/texture_recovery.json
"""

import argparse

from _common import dump

from texavatar.experiments import texture_recovery

p = argparse.ArgumentParser()
p.add_argument("--cameras", type=int, default=4)
p.add_argument("--poses", type=int, default=30)
p.add_argument("--steps", type=int, default=1500)
p.add_argument("--lr", type=float, default=0.01)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--out")
args = p.parse_args()

rep = texture_recovery(args.cameras, args.poses, args.steps, args.lr, seed=args.seed)
rep["passed"] = rep["mean_l1_observed"] < 0.05
dump(rep, args.out)

"""Single-frame overfit on the synthetic figure with the desk config.

    python3 scripts/overfit.py --steps 2000 --out results/overfit.json
"""

import argparse

from _common import dump, progress

from texavatar.experiments import overfit
from texavatar.train import TrainConfig

p = argparse.ArgumentParser()
p.add_argument("--steps", type=int, default=2000)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--out")
args = p.parse_args()

rep = overfit(args.steps, TrainConfig(seed=args.seed), on_record=progress(100))
rep["curve_every_100"] = {str(i): v for i, v in enumerate(rep["curve"]) if i % 100 == 0}
rep["passed"] = rep["first_step_below_20pct"] is not None and rep["ssim"] > 0.9
dump(rep, args.out)

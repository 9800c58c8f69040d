"""Hold-out camera protocol: 4 training cameras, 1 interior test camera, last 20% of motion held out.

Compares the trained model against the same pipeline with zero main-loop
steps. Takes a few minutes on one core.

    python3 scripts/generalization.py --steps 3000 --out results/generalization.json
"""

import argparse

from _common import dump, progress

from texavatar.experiments import generalization
from texavatar.train import TrainConfig

p = argparse.ArgumentParser()
p.add_argument("--poses", type=int, default=50)
p.add_argument("--steps", type=int, default=3000)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--out")
args = p.parse_args()

rep = generalization(args.poses, args.steps, TrainConfig(seed=args.seed), on_record=progress(250))
rep["passed"] = rep["improvement"] >= 0.05
dump(rep, args.out)

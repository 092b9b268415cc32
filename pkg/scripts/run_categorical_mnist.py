"""Full-scale run with categorical latent variables (20 groups of 10).

Uses 20 chain moves per datapoint and minibatch 200: categorical proposals
are cheap to score in blocks, and the larger move count compensates for the
bigger jumps a 10-way resample makes.
"""

import argparse
import sys

from jsalearn.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--algo", default="jsa", choices=("jsa", "rws"))
p.add_argument("--total-epochs", type=int, default=500)
p.add_argument("--stage1-epochs", type=int, default=300)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--data-root", default=None)
p.add_argument("--surrogate", action="store_true")
p.add_argument("--out", default="runs/categorical")
args = p.parse_args()

argv = ["train", "--task", "generative-categorical",
        "--arch", "categorical-20x10", "--algo", args.algo,
        "--particles", "20", "--batch", "200", "--lr", "3e-4",
        "--total-epochs", str(args.total_epochs),
        "--stage1-epochs", str(args.stage1_epochs), "--eval-every", "5",
        "--test-samples", "1000", "--seed", str(args.seed),
        "--out", args.out]
if args.data_root:
    argv += ["--data-root", args.data_root]
if args.surrogate:
    argv += ["--surrogate"]
sys.exit(main(argv))

"""Full-scale generative run with Bernoulli latent layers.

Defaults reproduce the benchmark configuration: linear architecture,
2 chain moves per datapoint, minibatch 50, Adam 3e-4, 600 warm-up epochs
then 400 with persistent chains. Swap --arch for nonlinear or two-layers.
"""

import argparse
import sys

from jsalearn.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--arch", default="linear",
               choices=("linear", "nonlinear", "two-layers"))
p.add_argument("--algo", default="jsa", choices=("jsa", "rws"))
p.add_argument("--total-epochs", type=int, default=1000)
p.add_argument("--stage1-epochs", type=int, default=600)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--data-root", default=None)
p.add_argument("--surrogate", action="store_true")
p.add_argument("--out", default="runs/bernoulli")
args = p.parse_args()

argv = ["train", "--task", "generative-bernoulli", "--arch", args.arch,
        "--algo", args.algo, "--particles", "2", "--batch", "50",
        "--lr", "3e-4", "--total-epochs", str(args.total_epochs),
        "--stage1-epochs", str(args.stage1_epochs), "--eval-every", "5",
        "--test-samples", "1000", "--seed", str(args.seed),
        "--out", args.out]
if args.data_root:
    argv += ["--data-root", args.data_root]
if args.surrogate:
    argv += ["--surrogate"]
sys.exit(main(argv))

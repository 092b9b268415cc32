"""Structured prediction: model the bottom half of each digit given the top.

The conditional architecture (structured-50) reads the 392-pixel context
into the prior, decoder, and encoder. Short warm-up (60 epochs), then
persistent chains for the rest of the run.
"""

import argparse
import sys

from jsalearn.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--algo", default="jsa", choices=("jsa", "rws"))
p.add_argument("--total-epochs", type=int, default=300)
p.add_argument("--stage1-epochs", type=int, default=60)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--data-root", default=None)
p.add_argument("--surrogate", action="store_true")
p.add_argument("--out", default="runs/structured")
args = p.parse_args()

argv = ["train", "--task", "structured", "--arch", "structured-50",
        "--algo", args.algo, "--particles", "2", "--batch", "100",
        "--lr", "3e-4", "--total-epochs", str(args.total_epochs),
        "--stage1-epochs", str(args.stage1_epochs), "--eval-every", "5",
        "--test-samples", "1000", "--seed", str(args.seed),
        "--out", args.out]
if args.data_root:
    argv += ["--data-root", args.data_root]
if args.surrogate:
    argv += ["--surrogate"]
sys.exit(main(argv))

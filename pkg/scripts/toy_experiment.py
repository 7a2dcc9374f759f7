"""Desk-scale end-to-end run: train the toy encoder, index 200 synthetic tracks, evaluate.

    python3 scripts/toy_experiment.py --workdir runs/toy
    python3 scripts/toy_experiment.py --tracks 30 --epochs 3 --queries 100   # quick look
"""
import argparse
import json
import logging
from pathlib import Path

from attnfp.experiment import ToySetup, run_toy_experiment


def main():
    defaults = ToySetup()
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--workdir", type=Path, default=Path("runs/toy"))
    p.add_argument("--tracks", type=int, default=defaults.n_tracks)
    p.add_argument("--seconds", type=float, default=defaults.track_seconds)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--steps", type=int, default=defaults.steps_per_epoch, help="batches per epoch")
    p.add_argument("--queries", type=int, default=defaults.n_queries)
    p.add_argument("--seed", type=int, default=defaults.seed)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    args.workdir.mkdir(parents=True, exist_ok=True)
    setup = ToySetup(n_tracks=args.tracks, track_seconds=args.seconds, epochs=args.epochs,
                     steps_per_epoch=args.steps, n_queries=args.queries, seed=args.seed)
    res = run_toy_experiment(setup, workdir=args.workdir)
    res.pop("loss_trace")
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()

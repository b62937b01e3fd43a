"""Batch-norm x dropout grid on a synthetic corpus; writes a CSV of per-cell metrics.

    python scripts/regularization_grid.py --corpus runs/desk/corpus --epochs 20 --out grid.csv

With --memorize N every cell trains on only N images, which exposes the
train/validation gap reported in the overfitting_degree column.
"""

import argparse
import logging
import sys
from pathlib import Path

from helmnet import data
from helmnet.trainer import TrainConfig, run_experiment_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", required=True, help="helmet/ and no_helmet/ directories of PPMs")
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--variant", default="final")
    ap.add_argument("--dropout", default="0.10,0.15,0.25,0.50")
    ap.add_argument("--memorize", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if not Path(args.corpus).exists():
        data.generate_synthetic_corpus(150, args.size, seed=7, out_dir=args.corpus)
    base = TrainConfig(variant=args.variant, image_size=args.size, epochs=args.epochs, seed=args.seed,
                       data_root=args.corpus, ratios=(2 / 3, 1 / 6, 1 / 6), max_train_samples=args.memorize)
    grid = {"variant": [args.variant], "use_batchnorm": [False, True],
            "dropout_rate": [float(x) for x in args.dropout.split(",")]}
    text = run_experiment_grid(base, grid)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


if __name__ == "__main__":
    main()

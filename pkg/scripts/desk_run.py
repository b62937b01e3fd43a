"""Synthesize a small corpus and train the final variant on it.

    python scripts/desk_run.py --out runs/desk --epochs 20

Writes corpus/, log.csv, ck.hnet and ck.best.hnet under --out and prints
the per-epoch log plus validation and test reports.
"""

import argparse
import logging
from pathlib import Path

from helmnet import data
from helmnet.trainer import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--per-class", type=int, default=150)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    corpus = out / "corpus"
    if not corpus.exists():
        data.generate_synthetic_corpus(args.per_class, args.size, seed=7, out_dir=corpus, threads=args.threads)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(variant="final", use_batchnorm=True, dropout_rate=0.10, image_size=args.size,
                      epochs=args.epochs, seed=args.seed, data_root=str(corpus), ratios=(2 / 3, 1 / 6, 1 / 6),
                      log_path=str(out / "log.csv"), checkpoint_path=str(out / "ck.hnet"), threads=args.threads)
    res = fit(cfg)
    print(f"best val {res.state['best_val_acc']:.1f}% at epoch {res.state['best_epoch']}")
    for name, rep in (("validation", res.val_report), ("test", res.test_report)):
        print(f"\n[{name}]\n{rep.format()}\n{rep.confusion.format()}")


if __name__ == "__main__":
    main()

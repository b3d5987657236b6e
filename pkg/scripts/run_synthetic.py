"""Overfit the synthetic four-tone task for several seeds and report accuracies.

Prints train and held-out accuracy per seed plus the window-5 smoothed loss curve.
"""

import argparse
import time

import numpy as np

from semanticac.config import load_config, synth_config
from semanticac.data import fold_split
from semanticac.train import evaluate, load_dataset, train


def smoothed(log, window=5):
    if len(log) < window:
        return np.asarray(log)
    return np.convolve(np.asarray(log), np.ones(window) / window, mode="valid")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value config file (default: synth profile)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int)
    args = ap.parse_args()

    base = load_config(args.config) if args.config else synth_config()
    if args.epochs:
        base = base.replace(epochs=args.epochs)
    for seed in args.seeds:
        cfg = base.replace(seed=seed)
        spec, samples = load_dataset(cfg)
        train_set, eval_set = fold_split(samples, cfg.eval_fold)
        start = time.perf_counter()
        result = train(cfg, train_set, spec)
        tr = evaluate(result.checkpoint, train_set, spec).accuracy
        ev = evaluate(result.checkpoint, eval_set, spec).accuracy
        print(f"seed {seed}: train {tr:.3f}  held-out {ev:.3f}  ({time.perf_counter() - start:.1f}s)")
        print("  smoothed loss:", " ".join(f"{x:.4f}" for x in smoothed(result.loss_log)))


if __name__ == "__main__":
    main()

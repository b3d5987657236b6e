"""Leave-one-fold-out evaluation: train on k-1 folds, test on the rest, for every fold.

Reports per-fold accuracy and the mean and sample std across folds.
"""

import argparse

import numpy as np

from semanticac.config import load_config, synth_config
from semanticac.data import fold_split
from semanticac.train import evaluate, load_dataset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value config file (default: synth profile)")
    ap.add_argument("--root", help="dataset root, overrides the config")
    ap.add_argument("--folds", type=int, nargs="+", help="subset of folds to evaluate")
    ap.add_argument("--report-dir", help="write one CSV report per fold here")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else synth_config()
    if args.root:
        cfg = cfg.replace(root=args.root)
    spec, samples = load_dataset(cfg)
    folds = args.folds or list(range(1, spec.n_folds + 1))
    accs = []
    for fold in folds:
        train_set, eval_set = fold_split(samples, fold)
        result = train(cfg.replace(eval_fold=fold), train_set, spec)
        report = evaluate(result.checkpoint, eval_set, spec)
        accs.append(report.accuracy)
        print(f"fold {fold}: {100 * report.accuracy:.2f}%  ({len(eval_set)} clips)")
        if args.report_dir:
            report.to_csv(f"{args.report_dir}/fold{fold}.csv")
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    print(f"mean {100 * np.mean(accs):.2f}% (±{100 * std:.2f}) over {len(accs)} folds")


if __name__ == "__main__":
    main()

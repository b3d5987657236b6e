"""Command-line entry point: train, eval, classify, ablate-prompts, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, desk_config, load_config
from .contrastive import classify
from .data import DatasetError, fold_split
from .dsp import load_wav
from .model import SemanticAC, clip_features
from .text import TEMPLATES
from .train import (
    _rates,
    evaluate,
    format_ablation,
    load_dataset,
    prompt_ablation,
    train,
    write_ablation,
)

log = logging.getLogger("semanticac")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(path, overrides) -> TrainConfig:
    cfg = load_config(path) if path else desk_config()
    return cfg.replace(**overrides) if overrides else cfg


def read_templates(path) -> list[str]:
    """One template per line; ``[LABEL]`` and ``{}`` both mark the label slot.

    A line naming a built-in template (``label``, ``clip``, ``audio_clip``)
    expands to it.
    """
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(TEMPLATES.get(line, line.replace("[LABEL]", "{}")))
    return out


def parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    changes = _overrides(args.set)
    changes["dataset"] = args.dataset
    if args.root:
        changes["root"] = args.root
    if args.fold is not None:
        changes["eval_fold"] = str(args.fold)
    cfg = _config(args.config, changes).validate()
    spec, samples = load_dataset(cfg)
    train_set, eval_set = fold_split(samples, cfg.eval_fold)
    print(f"{spec.name}: {len(train_set)} training clips, fold {cfg.eval_fold} held out ({len(eval_set)} clips)")

    def report(epoch, loss):
        print(f"epoch {epoch + 1:3d}/{cfg.epochs}  loss {loss:.5f}", flush=True)

    result = train(cfg, train_set, spec, on_epoch=report)
    save_checkpoint(result.checkpoint, args.out)
    print(f"wrote {args.out} (config {cfg.digest()})")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    changes = {}
    if args.root:
        changes["root"] = args.root
    if args.fold is not None:
        changes["eval_fold"] = str(args.fold)
    cfg = ckpt.config.replace(**changes)
    spec, samples = load_dataset(cfg)
    _, eval_set = fold_split(samples, cfg.eval_fold)
    report = evaluate(ckpt, eval_set, spec)
    if args.report:
        report.to_csv(args.report)
    for cid, name, support, acc in report.rows():
        print(f"{cid:3d}  {name:<28} {support:5d}  {acc}")
    print(report.summary())
    return 0


def cmd_classify(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    labels = [ln.strip() for ln in Path(args.labels).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not labels:
        raise DatasetError(f"{args.labels}: no labels")
    model = SemanticAC(cfg)
    params = model.params_from_arrays(ckpt.params)
    classes = model.class_matrix(params, labels, args.template)
    wave = load_wav(args.wav)
    feats = clip_features(wave, cfg, _rates(cfg)[1])
    audio = model.audio_embeddings(params, feats[None])[0]
    best, scores = classify(audio, list(enumerate(classes)))
    for i in np.argsort(scores)[::-1]:
        print(f"{scores[i]: .4f}  {labels[i]}")
    print(f"prediction: {labels[best]}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args.config, _overrides(args.set)).validate()
    templates = read_templates(args.templates)
    seeds = parse_seeds(args.seeds)
    spec, samples = load_dataset(cfg)
    rows = prompt_ablation(cfg, templates, seeds, samples, spec)
    print(format_ablation(rows))
    if args.out:
        write_ablation(rows, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    return gradcheck.main(range(args.seeds))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semanticac", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch details")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on all folds but one and write a checkpoint")
    p.add_argument("--dataset", choices=("esc50", "us8k", "synth"), required=True)
    p.add_argument("--root", default="", help="dataset root (unused for synth)")
    p.add_argument("--fold", type=int, help="held-out fold")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="per-class accuracy on one fold")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--root", default="")
    p.add_argument("--fold", type=int)
    p.add_argument("--report", help="CSV report path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("classify", help="label one wav file against a label list")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--labels", required=True, help="file with one label per line")
    p.add_argument("--template", help="prompt template, e.g. 'a clip of {}'")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("ablate-prompts", help="train+eval per (template, seed); mean and std table")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--templates", required=True, help="file with one template per line")
    p.add_argument("--seeds", default="0,1,2", help="comma list, ranges allowed: 0-2")
    p.add_argument("--out", help="CSV path for the table")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference suite; nonzero exit on failure")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (ConfigError, DatasetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Prompt-template ablation: one training run per (template, seed).

Thin wrapper over ``semanticac ablate-prompts`` with the bundled templates.
"""

import argparse
from pathlib import Path

from semanticac.cli import main as cli_main

HERE = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "synth.cfg"))
    ap.add_argument("--templates", default=str(HERE / "templates.txt"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="ablation.csv")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    argv = ["ablate-prompts", "--config", args.config, "--templates", args.templates, "--seeds", args.seeds, "--out", args.out]
    for item in args.set:
        argv += ["--set", item]
    raise SystemExit(cli_main(argv))


if __name__ == "__main__":
    main()

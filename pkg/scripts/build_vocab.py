"""Regenerate the bundled toy BPE vocabulary (src/semanticac/assets/vocab.txt).

The corpus is every dataset label, the prompt templates and a short list of
everyday sound words, so all labels tokenize into a handful of merged tokens.
"""

import argparse
from pathlib import Path

from semanticac.data import ESC50_CLASSES, US8K_CLASSES, label_text, tone_frequency
from semanticac.text import TEMPLATES, apply_prompt, train_bpe

EXTRA = """
the a an of and in on with at to from sound sounds noise audio clip clips recording
tone tones hz khz low high pitch loud quiet music voice speech people person man woman
child children animal animals bird birds water fire wind rain car truck bus street city
machine engine motor door window glass metal wood paper phone bell bells alarm
one two three four five six seven eight nine ten hundred thousand
"""


def corpus() -> list[str]:
    labels = [label_text(c) for c in ESC50_CLASSES + US8K_CLASSES]
    labels += [f"tone {round(tone_frequency(k))} hz" for k in range(8)]
    lines = list(labels)
    for t in TEMPLATES.values():
        lines += [apply_prompt(lbl, t) for lbl in labels]
    lines += EXTRA.split("\n")
    return lines


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--merges", type=int, default=486)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/semanticac/assets/vocab.txt"))
    args = ap.parse_args()
    vocab = train_bpe(corpus(), args.merges)
    vocab.save(args.out)
    print(f"wrote {vocab.vocab_size} tokens, {len(vocab.merges)} merges -> {args.out}")


if __name__ == "__main__":
    main()

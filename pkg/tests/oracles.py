"""Independent scalar references written with the math module only."""

import math


def cosine(a, t):
    dot = sum(x * y for x, y in zip(a, t))
    na = math.sqrt(sum(x * x for x in a))
    nt = math.sqrt(sum(y * y for y in t))
    return dot / (na * nt)


def similarity(audio, text):
    return [[cosine(a, t) for t in text] for a in audio]


def _row_ce(row, target):
    top = max(row)
    lse = top + math.log(sum(math.exp(v - top) for v in row))
    return lse - row[target]


def symmetric_ce(S, scale=1.0):
    n = len(S)
    logits = [[scale * S[i][j] for j in range(n)] for i in range(n)]
    rows = sum(_row_ce(logits[i], i) for i in range(n)) / n
    cols = sum(_row_ce([logits[j][i] for j in range(n)], i) for i in range(n)) / n
    return 0.5 * (rows + cols)

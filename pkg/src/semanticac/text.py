"""Label prompts, byte-level BPE tokenization and the transformer text tower."""

from __future__ import annotations

import collections
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Tensor
from .config import TrainConfig

START = "<|startoftext|>"
END = "<|endoftext|>"
EOW = "</w>"

TEMPLATES = {
    "label": "{}",
    "clip": "a clip of {}",
    "audio_clip": "an audio clip of {}",
}


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str

    def __post_init__(self):
        if self.pattern.count("{}") != 1:
            raise ValueError(f"template needs exactly one '{{}}' placeholder: {self.pattern!r}")


def apply_prompt(label: str, template: PromptTemplate | str) -> str:
    """Fill the template with the label; underscores become spaces, all lowercase."""
    if not label:
        raise ValueError("label must be non-empty")
    if isinstance(template, str):
        template = PromptTemplate(template)
    return template.pattern.format(label.replace("_", " ")).lower()


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


@lru_cache(maxsize=None)
def bytes_to_unicode() -> dict[int, str]:
    """Reversible byte -> printable character table (no whitespace characters)."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    chars = keep[:]
    n = 0
    for b in range(256):
        if b not in keep:
            keep.append(b)
            chars.append(256 + n)
            n += 1
    return dict(zip(keep, map(chr, chars)))


@dataclass
class TokenSequence:
    ids: list[int]

    @property
    def length(self) -> int:
        return len(self.ids)


class BpeVocab:
    """Token table plus ranked merge list.

    File layout: a ``#VOCAB`` line, one token per line (line order is the id),
    then a ``#MERGES`` line and one space-separated pair per line.
    """

    def __init__(self, tokens: list[str], merges: list[tuple[str, str]]):
        self.tokens = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise TokenizerError("duplicate tokens in vocabulary")
        for a, b in merges:
            if a not in self.token_to_id or b not in self.token_to_id or a + b not in self.token_to_id:
                raise TokenizerError(f"merge ({a!r}, {b!r}) references unknown tokens")
        for special in (START, END):
            if special not in self.token_to_id:
                raise TokenizerError(f"vocabulary lacks {special}")
        self.merges = list(merges)
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.start_id = self.token_to_id[START]
        self.end_id = self.token_to_id[END]
        self._cache: dict[str, list[str]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    # -- file format ------------------------------------------------------

    def dumps(self) -> str:
        out = ["#VOCAB", *self.tokens, "#MERGES", *(f"{a} {b}" for a, b in self.merges)]
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "BpeVocab":
        tokens, merges, section = [], [], None
        for line in text.splitlines():
            if line in ("#VOCAB", "#MERGES"):
                section = line
                continue
            if not line:
                continue
            if section == "#VOCAB":
                tokens.append(line)
            elif section == "#MERGES":
                a, b = line.split(" ")
                merges.append((a, b))
            else:
                raise TokenizerError("vocabulary file must start with #VOCAB")
        return cls(tokens, merges)

    @classmethod
    def load(cls, path) -> "BpeVocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    # -- encoding ---------------------------------------------------------

    def word_symbols(self, word: str) -> list[str]:
        if word in self._cache:
            return self._cache[word]
        table = bytes_to_unicode()
        chars = [table[b] for b in word.encode("utf-8")]
        symbols = chars[:-1] + [chars[-1] + EOW]
        while len(symbols) > 1:
            pairs = [(self.ranks.get(p, None), i, p) for i, p in enumerate(zip(symbols, symbols[1:]))]
            pairs = [p for p in pairs if p[0] is not None]
            if not pairs:
                break
            _, _, best = min(pairs)
            merged, i = [], 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == best:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        self._cache[word] = symbols
        return symbols

    def decode(self, ids) -> str:
        inv = {v: k for k, v in bytes_to_unicode().items()}
        pieces = []
        for i in ids:
            if i in (self.start_id, self.end_id):
                continue
            pieces.append(self.tokens[i])
        text = "".join(pieces).replace(EOW, " ")
        raw = bytearray()
        for ch in text:
            raw.extend(b" " if ch == " " else bytes([inv[ch]]))
        return raw.decode("utf-8", errors="replace").strip()


def tokenize(text: str, vocab: BpeVocab, max_len: int = 76) -> TokenSequence:
    """Lowercase, split on whitespace, BPE each word, wrap in start/end markers.

    Sequences longer than ``max_len`` are cut but always end with the end token.
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    ids = []
    for word in normalize(text).split(" "):
        if not word:
            continue
        for sym in vocab.word_symbols(word):
            tid = vocab.token_to_id.get(sym)
            if tid is None:
                raise TokenizerError(f"no token for {sym!r} (in word {word!r}); vocabulary lacks byte fallback")
            ids.append(tid)
    ids = ids[: max_len - 2]
    return TokenSequence([vocab.start_id, *ids, vocab.end_id])


def base_tokens() -> list[str]:
    chars = list(bytes_to_unicode().values())
    return chars + [c + EOW for c in chars]


def train_bpe(corpus: list[str], n_merges: int) -> BpeVocab:
    """Learn ``n_merges`` merges from whitespace-separated words.

    Ties between equally frequent pairs go to the lexicographically smallest.
    """
    table = bytes_to_unicode()
    words = collections.Counter(w for line in corpus for w in normalize(line).split(" ") if w)
    split = {}
    for w in words:
        chars = [table[b] for b in w.encode("utf-8")]
        split[w] = chars[:-1] + [chars[-1] + EOW]
    tokens = base_tokens()
    known = set(tokens)
    merges = []
    while len(merges) < n_merges:
        counts = collections.Counter()
        for w, syms in split.items():
            for pair in zip(syms, syms[1:]):
                counts[pair] += words[w]
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        new = best[0] + best[1]
        if new not in known:
            tokens.append(new)
            known.add(new)
        for w, syms in split.items():
            out, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == best:
                    out.append(new)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            split[w] = out
    return BpeVocab(tokens + [START, END], merges)


def bundled_vocab() -> BpeVocab:
    text = resources.files("semanticac").joinpath("assets/vocab.txt").read_text(encoding="utf-8")
    return BpeVocab.loads(text)


def load_vocab(cfg: TrainConfig) -> BpeVocab:
    vocab = BpeVocab.load(cfg.text.vocab_path) if cfg.text.vocab_path else bundled_vocab()
    if cfg.text.vocab_size and vocab.vocab_size > cfg.text.vocab_size:
        raise TokenizerError(
            f"vocabulary has {vocab.vocab_size} tokens, config allows {cfg.text.vocab_size}"
        )
    return vocab


# ---------------------------------------------------------------------------
# tower
# ---------------------------------------------------------------------------


class TextTower:
    """Token + learned position embedding, causal pre-norm transformer,
    end-token pooling and a linear projection to the shared space."""

    def __init__(self, cfg: TrainConfig, vocab_size: int):
        self.cfg = cfg.text
        self.embed_dim = cfg.embed_dim
        self.rows = cfg.text.vocab_size or vocab_size

    def init(self, rng: np.random.Generator, dtype) -> L.Params:
        c = self.cfg
        p: L.Params = {}
        p["text.tok"] = L.param((rng.standard_normal((self.rows, c.width)) * 0.02).astype(dtype), "text.tok")
        p["text.pos"] = L.param((rng.standard_normal((c.max_len, c.width)) * 0.01).astype(dtype), "text.pos")
        for i in range(c.layers):
            L.init_block(p, f"text.blocks.{i}", c.width, rng, dtype)
        L.init_layer_norm(p, "text.ln_f", c.width, dtype)
        p["text.proj"] = L.param(
            (rng.standard_normal((c.width, self.embed_dim)) / np.sqrt(c.width)).astype(dtype), "text.proj"
        )
        return p

    def __call__(self, p: L.Params, seqs: list[TokenSequence]) -> Tensor:
        """Encode a batch of token sequences to [B, C] label embeddings."""
        length = max(s.length for s in seqs)
        if length > p["text.pos"].shape[0]:
            raise TokenizerError(
                f"sequence of {length} tokens exceeds positional table of {p['text.pos'].shape[0]}"
            )
        b = len(seqs)
        ids = np.zeros((b, length), dtype=np.int64)
        select = np.zeros((b, 1, length), dtype=p["text.tok"].dtype)
        for i, s in enumerate(seqs):
            ids[i, : s.length] = s.ids
            ids[i, s.length :] = s.ids[-1]
            select[i, 0, s.length - 1] = 1.0
        x = ad.add(ad.embed_lookup(p["text.tok"], ids), ad.embed_lookup(p["text.pos"], np.arange(length)))
        mask = np.triu(np.full((length, length), -1e9), k=1)
        for i in range(self.cfg.layers):
            x = L.block(x, p, f"text.blocks.{i}", self.cfg.heads, mask)
        x = L.norm(x, p, "text.ln_f")
        pooled = ad.reshape(ad.matmul(Tensor(select), x), (b, self.cfg.width))
        return ad.matmul(pooled, p["text.proj"])


def encode_text(tokens: TokenSequence, params: L.Params, tower: TextTower) -> np.ndarray:
    """Single-sequence convenience wrapper returning a length-C vector."""
    with ad.no_grad():
        return tower(params, [tokens]).data[0]

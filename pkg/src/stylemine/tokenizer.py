"""Byte-pair encoding with reserved special tokens and style tags.

Words are whitespace tokens followed by an end-of-word symbol ``EOW``, which
is a symbol of its own (it sorts after ASCII, so the tie-break prefers
merging letters first) and gets absorbed by learned merges.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import StyleCorpus, StyleTag

PAD, BOS, EOS, UNK, MASK = "<pad>", "<s>", "</s>", "<unk>", "<mask>"
BASE_SPECIALS = (PAD, BOS, EOS, UNK, MASK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = range(5)
EOW = "▁"
FORMAT_HEADER = "stylemine-bpe"
FORMAT_VERSION = 1
PUNCTUATION = frozenset(".,!?;:")


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    has_style_prefix: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not self.ids:
            raise TokenizerError("empty token sequence")

    def __len__(self):
        return len(self.ids)

    @property
    def content(self) -> tuple:
        return self.ids[1:] if self.has_style_prefix else self.ids

    @property
    def prefix(self):
        return self.ids[0] if self.has_style_prefix else None


def _word_symbols(word: str) -> tuple:
    return tuple(word) + (EOW,)


def _merge_word(symbols: tuple, pair: tuple, merged: str) -> tuple:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass
class BpeModel:
    merges: list
    vocab: dict
    style_tags: tuple
    _ranks: dict = field(init=False, repr=False, compare=False)
    _inv: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self._ranks = {m: r for r, m in enumerate(self.merges)}
        self._inv = [None] * len(self.vocab)
        for tok, i in self.vocab.items():
            self._inv[i] = tok
        if any(t is None for t in self._inv):
            raise TokenizerError("vocab ids are not contiguous")
        for tag in self.style_tags:
            if tag.surface not in self.vocab:
                raise TokenizerError(f"style tag {tag.surface} missing from vocab")
        self._segment = lru_cache(maxsize=65536)(self._segment_word)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def n_specials(self) -> int:
        return len(BASE_SPECIALS) + len(self.style_tags)

    def tag_id(self, tag: StyleTag) -> int:
        return self.vocab[tag.surface]

    @property
    def tag_ids(self) -> frozenset:
        return frozenset(self.vocab[t.surface] for t in self.style_tags)

    def tag_for_id(self, i: int) -> StyleTag:
        for t in self.style_tags:
            if self.vocab[t.surface] == i:
                return t
        raise KeyError(i)

    def is_special(self, i: int) -> bool:
        return i < self.n_specials

    def token(self, i: int) -> str:
        return self._inv[i]

    @property
    def punctuation_ids(self) -> frozenset:
        """Ids of tokens that close a punctuation-delimited segment."""
        return frozenset(i for t, i in self.vocab.items()
                         if i >= self.n_specials and t.rstrip(EOW) in PUNCTUATION and t.rstrip(EOW))

    def _segment_word(self, word: str) -> tuple:
        symbols = _word_symbols(word)
        while len(symbols) > 1:
            pairs = {(a, b) for a, b in zip(symbols, symbols[1:])}
            best = min(pairs, key=lambda p: self._ranks.get(p, float("inf")))
            if best not in self._ranks:
                break
            symbols = _merge_word(symbols, best, best[0] + best[1])
        return symbols

    def encode(self, text: str, style: StyleTag | None = None) -> TokenSequence:
        words = text.split()
        if not words:
            raise TokenizerError("cannot encode empty text")
        ids = [self.vocab[style.surface]] if style is not None else []
        for w in words:
            for sym in self._segment(w):
                ids.append(self.vocab.get(sym, UNK_ID))
        return TokenSequence(ids, style is not None)

    def decode(self, seq) -> str:
        ids = seq.ids if isinstance(seq, TokenSequence) else tuple(seq)
        parts = []
        for i in ids:
            if not 0 <= i < self.vocab_size:
                raise TokenizerError(f"token id {i} out of range for vocab of {self.vocab_size}")
            if i == UNK_ID:
                parts.append(UNK)
            elif not self.is_special(i):
                parts.append(self._inv[i])
        return " ".join("".join(parts).replace(EOW, " ").split())

    def save(self, path) -> None:
        lines = [f"{FORMAT_HEADER}\t{FORMAT_VERSION}\t{len(self.merges)}\t{len(self.vocab)}\t{len(self.style_tags)}"]
        lines += [f"{t.id}\t{t.surface}" for t in self.style_tags]
        lines += [f"{a} {b}" for a, b in self.merges]
        lines += [f"{tok}\t{i}" for tok, i in sorted(self.vocab.items(), key=lambda kv: kv[1])]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        head = lines[0].split("\t")
        if len(head) != 5 or head[0] != FORMAT_HEADER:
            raise TokenizerError(f"{path} is not a BPE model file")
        if int(head[1]) != FORMAT_VERSION:
            raise TokenizerError(f"unsupported BPE model version {head[1]}")
        n_merges, n_vocab, n_tags = map(int, head[2:])
        pos = 1
        tags = tuple(StyleTag(*lines[pos + k].split("\t")) for k in range(n_tags))
        pos += n_tags
        merges = [tuple(lines[pos + k].split(" ")) for k in range(n_merges)]
        pos += n_merges
        vocab = {}
        for k in range(n_vocab):
            tok, i = lines[pos + k].rsplit("\t", 1)
            vocab[tok] = int(i)
        return cls(merges, vocab, tags)


def train_bpe(corpora: Sequence[StyleCorpus], merge_budget: int,
              style_tags: Iterable[StyleTag] | None = None) -> BpeModel:
    """Learn up to ``merge_budget`` merges jointly over all corpora.

    Each step merges the most frequent adjacent symbol pair; equal counts go
    to the lexicographically smallest pair. Training stops early once no pair
    occurs at least twice.
    """
    if merge_budget < 0:
        raise ValueError("merge_budget must be >= 0")
    if style_tags is None:
        style_tags = []
        for c in corpora:
            if c.style not in style_tags:
                style_tags.append(c.style)
    style_tags = tuple(style_tags)

    word_freq = Counter(w for c in corpora for s in c for w in s.text.split())
    if not word_freq:
        raise TokenizerError("no text to train on")

    words = {_word_symbols(w): f for w, f in word_freq.items()}
    alphabet = sorted({sym for syms in words for sym in syms})

    merges = []
    for _ in range(merge_budget):
        counts = Counter()
        for syms, f in words.items():
            for pair in zip(syms, syms[1:]):
                counts[pair] += f
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        merged = best[0] + best[1]
        merges.append(best)
        new_words = {}
        for syms, f in words.items():
            if best[0] in syms:
                syms = _merge_word(syms, best, merged)
            new_words[syms] = new_words.get(syms, 0) + f
        words = new_words

    vocab = {}
    for tok in BASE_SPECIALS + tuple(t.surface for t in style_tags):
        if tok in vocab:
            raise TokenizerError(f"duplicate special token {tok}")
        vocab[tok] = len(vocab)
    for tok in alphabet + [a + b for a, b in merges]:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    return BpeModel(merges, vocab, style_tags)

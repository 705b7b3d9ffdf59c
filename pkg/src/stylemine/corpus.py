"""Monostylistic corpora: loading, filtering, deduplication and a synthetic task.

Corpora are immutable; every operation returns a new :class:`StyleCorpus`.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus input."""


@dataclass(frozen=True)
class StyleTag:
    id: str
    surface: str

    def __post_init__(self):
        if not self.surface or any(c.isspace() for c in self.surface):
            raise ValueError(f"invalid tag surface {self.surface!r}")


@dataclass(frozen=True)
class Sentence:
    text: str
    style: StyleTag
    id: int

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("empty sentence")
        if "\n" in self.text or "\r" in self.text:
            raise CorpusError(f"sentence {self.id} contains a newline")

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class StyleCorpus:
    style: StyleTag
    sentences: tuple[Sentence, ...]
    split: str = "train"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")
        for s in self.sentences:
            if s.style != self.style:
                raise CorpusError(f"sentence {s.id} has style {s.style.id}, corpus is {self.style.id}")

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]

    def _with(self, sentences: Iterable[Sentence], step: str | None = None) -> "StyleCorpus":
        meta = dict(self.metadata)
        if step:
            meta["steps"] = list(meta.get("steps", [])) + [step]
        return replace(self, sentences=tuple(sentences), metadata=meta)


@dataclass(frozen=True)
class Lexicon:
    entries: frozenset

    def __init__(self, entries: Iterable[str]):
        object.__setattr__(self, "entries", frozenset(e.strip().lower() for e in entries if e.strip()))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self.entries

    @classmethod
    def load(cls, path) -> "Lexicon":
        return cls(Path(path).read_text(encoding="utf-8").split("\n"))


def from_texts(texts: Iterable[str], style: StyleTag, split: str = "train") -> StyleCorpus:
    sents = tuple(Sentence(t, style, i) for i, t in enumerate(texts))
    return StyleCorpus(style, sents, split)


def load_corpus(path, style: StyleTag, split: str = "train") -> StyleCorpus:
    """Read a UTF-8 file with one sentence per line.

    Empty lines are dropped; ids are assigned to the remaining lines in file order.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    texts = []
    for lineno, line in enumerate(raw.split(b"\n"), start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusError(f"{path}: line {lineno} is not valid UTF-8") from exc
        text = text.strip()
        if text:
            texts.append(text)
    corpus = from_texts(texts, style, split)
    return replace(corpus, metadata={"source": str(path), "steps": []})


def save_corpus(corpus: StyleCorpus, path) -> None:
    Path(path).write_text("".join(t + "\n" for t in corpus.texts), encoding="utf-8")


_URL = re.compile(r"(https?://|www\.)\S+", re.IGNORECASE)
_PUNCT = re.compile(r"([.,!?;:()\"])")


def normalize_text(text: str) -> str:
    """Lowercase and space out punctuation; collapses runs of whitespace."""
    text = _PUNCT.sub(r" \1 ", text.lower())
    return " ".join(text.split())


def preprocess(corpus: StyleCorpus, tags: Sequence[StyleTag] = ()) -> StyleCorpus:
    """Normalize every sentence and drop those containing URLs or tag surfaces."""
    surfaces = [t.surface.lower() for t in tags] + [corpus.style.surface.lower()]
    kept = []
    for s in corpus:
        if _URL.search(s.text):
            continue
        text = normalize_text(s.text)
        if not text or any(surf in text for surf in surfaces):
            continue
        kept.append(replace(s, text=text))
    return corpus._with(kept, "normalize:lowercase+punct-spacing;drop:url,tag")


def filter_by_length(corpus: StyleCorpus, min_words: int, max_words: int) -> StyleCorpus:
    if min_words < 1:
        raise ValueError("min_words must be >= 1")
    if min_words > max_words:
        raise ValueError(f"min_words {min_words} > max_words {max_words}")
    kept = [s for s in corpus if min_words <= s.word_count <= max_words]
    return corpus._with(kept, f"length:{min_words}-{max_words}")


def dedup(corpus: StyleCorpus) -> StyleCorpus:
    # exact, case-sensitive match
    seen = set()
    kept = []
    for s in corpus:
        if s.text not in seen:
            seen.add(s.text)
            kept.append(s)
    return corpus._with(kept, "dedup")


def _has_lexicon_word(text: str, lexicon: Lexicon) -> bool:
    return any(w in lexicon for w in text.lower().split())


def lexicon_filter(corpus: StyleCorpus, lexicon: Lexicon, mode: str) -> StyleCorpus:
    """Keep sentences with at least one lexicon word (``require``) or none (``exclude``)."""
    if not len(lexicon):
        raise ValueError("empty lexicon")
    if mode not in ("require", "exclude"):
        raise ValueError(f"mode must be 'require' or 'exclude', got {mode!r}")
    want = mode == "require"
    kept = [s for s in corpus if _has_lexicon_word(s.text, lexicon) == want]
    return corpus._with(kept, f"lexicon:{mode}")


def remove_overlap(train: StyleCorpus, held_out: Sequence[StyleCorpus]) -> StyleCorpus:
    banned = {t for c in held_out for t in c.texts}
    kept = [s for s in train if s.text not in banned]
    if not kept and len(train):
        logger.warning("remove_overlap left %s/%s empty", train.style.id, train.split)
    return train._with(kept, "remove-overlap")


# --- synthetic task ---------------------------------------------------------
#
# Each topic binds a set of nouns to one (style A, style B) adjective pair, so
# the counterpart of a sentence is identifiable from content alone.

SYNTH_TAGS = (StyleTag("pos", "<pos>"), StyleTag("neg", "<neg>"))

SYNTH_TOPICS = (
    (("pizza", "pasta", "soup", "burger"), "delicious", "disgusting"),
    (("waiter", "manager", "owner", "cashier"), "friendly", "rude"),
    (("price", "bill", "deal", "check"), "fair", "outrageous"),
    (("room", "patio", "lobby", "bathroom"), "clean", "filthy"),
    (("service", "delivery", "checkout", "staff"), "fast", "slow"),
    (("music", "band", "singer", "playlist"), "lovely", "awful"),
    (("coffee", "tea", "latte", "bread"), "fresh", "stale"),
    (("chair", "booth", "bed", "couch"), "comfortable", "uncomfortable"),
    (("view", "garden", "decor", "lighting"), "beautiful", "ugly"),
    (("visit", "evening", "stay", "trip"), "wonderful", "terrible"),
)

SYNTH_TEMPLATES = (
    "we came here for dinner and the {noun} was {adj} .",
    "i have to say that the {noun} at this place was {adj} .",
    "honestly , the {noun} was {adj} when we went {when} .",
    "{who} told me that the {noun} here is always {adj} .",
    "after all these years i still think the {noun} is {adj} .",
    "we stopped by {when} and found the {noun} {adj} as usual .",
    "as always , the {noun} at the corner spot was {adj} .",
    "{who} thought that the {noun} was really {adj} this week .",
    "if you ask me , the {noun} at this place is {adj} .",
    "the last time we were here the {noun} was {adj} .",
    "i do not know why , but the {noun} was {adj} .",
    "overall the {noun} felt {adj} to {who} and me .",
    "the {noun} is so {adj} that we will tell everyone about it .",
    "{who} noticed right away that the {noun} was {adj} .",
    "to tell the truth , the {noun} was {adj} for the whole night .",
    "what a {adj} {noun} we had at this place {when} .",
    "from the moment we sat down the {noun} seemed {adj} .",
    "in short , the {noun} was {adj} and that says it all .",
    "{who} and i both agreed that the {noun} was {adj} .",
    "i must admit that the {noun} was quite {adj} on our visit .",
)

SYNTH_WHO = ("my friend", "my sister", "everyone", "my husband", "my boss")
SYNTH_WHEN = ("today", "tonight", "yesterday", "again", "this time")

SYNTH_LEXICON_A = tuple(t[1] for t in SYNTH_TOPICS)
SYNTH_LEXICON_B = tuple(t[2] for t in SYNTH_TOPICS)
_SWAP = {**dict(zip(SYNTH_LEXICON_A, SYNTH_LEXICON_B)), **dict(zip(SYNTH_LEXICON_B, SYNTH_LEXICON_A))}


def synth_gold(text: str) -> str:
    """Gold counterpart of a synthetic sentence: every style word swapped."""
    return " ".join(_SWAP.get(w, w) for w in text.split())


def _synth_sentence(rng: np.random.Generator) -> tuple[str, str]:
    template = SYNTH_TEMPLATES[rng.integers(len(SYNTH_TEMPLATES))]
    nouns, adj_a, adj_b = SYNTH_TOPICS[rng.integers(len(SYNTH_TOPICS))]
    slots = {
        "noun": nouns[rng.integers(len(nouns))],
        "who": SYNTH_WHO[rng.integers(len(SYNTH_WHO))],
        "when": SYNTH_WHEN[rng.integers(len(SYNTH_WHEN))],
    }
    return template.format(adj=adj_a, **slots), template.format(adj=adj_b, **slots)


def synth_generate(n_per_style: int, seed: int, split: str = "train") -> tuple[StyleCorpus, StyleCorpus]:
    """Two template corpora whose styles differ only in the adjective slot.

    Each corpus is sampled independently (no sentence is paired with its
    counterpart by construction) and deduplicated, so it may hold fewer than
    ``n_per_style`` sentences. Use :func:`synth_gold` for counterparts; the
    trainer never does.
    """
    if n_per_style < 1:
        raise ValueError("n_per_style must be >= 1")
    rng = np.random.default_rng([seed, SPLITS.index(split)])
    out = []
    for side, tag in enumerate(SYNTH_TAGS):
        texts = [_synth_sentence(rng)[side] for _ in range(n_per_style)]
        corpus = dedup(from_texts(texts, tag, split))
        out.append(replace(corpus, metadata={"source": f"synth:seed={seed}", "steps": ["dedup"]}))
    return out[0], out[1]


def write_gold_tsv(corpus_a: StyleCorpus, path) -> None:
    Path(path).write_text("".join(f"{t}\t{synth_gold(t)}\n" for t in corpus_a.texts), encoding="utf-8")

"""Glue for the standard preprocessing chain and evaluator construction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import corpus as C
from .evaluation import EmbeddingBagEmbedder, Evaluator, FluencyScorer, TrigramLM, train_style_classifier
from .tokenizer import BpeModel, train_bpe

DEFAULT_MIN_WORDS = 5
DEFAULT_MAX_WORDS = 25


@dataclass
class TaskData:
    train: tuple
    dev: tuple
    test: tuple
    tokenizer: BpeModel | None = None

    @property
    def tags(self) -> tuple:
        return (self.train[0].style, self.train[1].style)


def clean_corpus(corpus: C.StyleCorpus, tags: Sequence[C.StyleTag] = (), min_words: int = DEFAULT_MIN_WORDS,
                 max_words: int = DEFAULT_MAX_WORDS) -> C.StyleCorpus:
    return C.dedup(C.filter_by_length(C.preprocess(corpus, tags), min_words, max_words))


def prepare(train, dev, test, merge_budget: int | None = 500, min_words: int = DEFAULT_MIN_WORDS,
            max_words: int = DEFAULT_MAX_WORDS) -> TaskData:
    """Preprocess all splits, strip held-out text from train, and fit a joint BPE."""
    tags = (train[0].style, train[1].style)
    clean = lambda c: clean_corpus(c, tags, min_words, max_words)  # noqa: E731
    train, dev, test = [tuple(clean(c) for c in split) for split in (train, dev, test)]
    held = list(dev) + list(test)
    train = tuple(C.remove_overlap(c, held) for c in train)
    dev = tuple(C.remove_overlap(c, list(test)) for c in dev)
    tok = train_bpe(list(train), merge_budget, tags) if merge_budget is not None else None
    return TaskData(train, dev, test, tok)


def synth_task(n_train: int = 2000, n_dev: int = 200, n_test: int = 200, seed: int = 0,
               merge_budget: int = 500) -> TaskData:
    return prepare(C.synth_generate(n_train, seed, "train"), C.synth_generate(n_dev, seed, "dev"),
                   C.synth_generate(n_test, seed, "test"), merge_budget)


def build_evaluator(embedding_model, task: TaskData, seed: int = 0) -> Evaluator:
    """ATA classifier and FLU LM from the train split; CP from ``embedding_model``'s embeddings."""
    a, b = task.train
    clf = train_style_classifier(a, b, dev=task.dev, seed=seed)
    lm = TrigramLM().fit(a.texts + b.texts)
    flu = FluencyScorer(lm).calibrate([t for c in task.dev for t in c.texts], seed=seed)
    emb = EmbeddingBagEmbedder.from_model(embedding_model, task.tokenizer, task.train)
    return Evaluator(clf, flu, emb)

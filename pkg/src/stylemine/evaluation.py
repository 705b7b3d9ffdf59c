"""Automatic transfer metrics and human-rating statistics.

The learned evaluators are desk-scale stand-ins:

* CP: cosine between idf-weighted bags of (DAE-pretrained) word embeddings.
* FLU: a word-trigram backoff LM with a perplexity threshold calibrated on
  clean versus shuffled held-out sentences.
* ATA: logistic regression over hashed word 1-2-grams.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.stats

from .corpus import StyleCorpus, StyleTag


class MetricError(ValueError):
    pass


# --- content preservation ------------------------------------------------------

def content_preservation(src: str, pred: str, embedder: Callable[[str], np.ndarray]) -> float:
    if not src.strip() or not pred.strip():
        raise MetricError("content_preservation needs two non-empty sentences")
    u, v = np.asarray(embedder(src), dtype=np.float64), np.asarray(embedder(pred), dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), 0.0, 1.0))


class BagOfWordsEmbedder:
    """Word-count vectors over a fixed vocabulary; unknown words share one slot."""

    def __init__(self, vocabulary: Sequence[str]):
        self.index = {w: i for i, w in enumerate(sorted(set(vocabulary)))}

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(len(self.index) + 1)
        for w in text.split():
            v[self.index.get(w, len(self.index))] += 1
        return v


class EmbeddingBagEmbedder:
    """Idf-weighted sum of a token embedding table over content tokens."""

    def __init__(self, table: np.ndarray, tokenizer, idf: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)
        self.tokenizer = tokenizer
        self.idf = idf

    @classmethod
    def from_model(cls, model, tokenizer, corpora: Sequence[StyleCorpus]) -> "EmbeddingBagEmbedder":
        table = model.net.embed.weight.detach().double().numpy().copy()
        df = np.zeros(tokenizer.vocab_size)
        n_docs = 0
        for c in corpora:
            for s in c:
                df[list(set(tokenizer.encode(s.text).ids))] += 1
                n_docs += 1
        idf = np.log((n_docs + 1) / (df + 1)) + 1.0
        idf[: tokenizer.n_specials] = 0.0
        return cls(table, tokenizer, idf)

    def __call__(self, text: str) -> np.ndarray:
        ids = np.array(self.tokenizer.encode(text).ids)
        return (self.table[ids] * self.idf[ids, None]).sum(0)


# --- fluency -------------------------------------------------------------------

BOS_W, EOS_W, UNK_W = "<s>", "</s>", "<unk>"


class TrigramLM:
    """Word trigram model with absolute-discount Katz backoff to an add-one unigram."""

    def __init__(self, discount: float = 0.5):
        self.d = discount
        self.trained = False

    def fit(self, sentences: Sequence[str]) -> "TrigramLM":
        c1, c2, c3 = Counter(), Counter(), Counter()
        for s in sentences:
            toks = [BOS_W, BOS_W] + s.split() + [EOS_W]
            for i in range(2, len(toks)):
                c1[toks[i]] += 1
                c2[(toks[i - 1], toks[i])] += 1
                c3[(toks[i - 2], toks[i - 1], toks[i])] += 1
        self.vocab = set(c1) | {UNK_W}
        self.n1 = sum(c1.values())
        self.c1, self.c2, self.c3 = c1, c2, c3
        self.ctx2, self.ctx3 = Counter(), Counter()
        self.follow2, self.follow3 = defaultdict(list), defaultdict(list)
        for (v, w), c in c2.items():
            self.ctx2[v] += c
            self.follow2[v].append(w)
        for (u, v, w), c in c3.items():
            self.ctx3[(u, v)] += c
            self.follow3[(u, v)].append(w)
        self._alpha2 = {v: self._alpha(self.ctx2[v], ws, lambda w: self.p1(w)) for v, ws in self.follow2.items()}
        self._alpha3 = {uv: self._alpha(self.ctx3[uv], ws, lambda w, v=uv[1]: self.p2(v, w))
                        for uv, ws in self.follow3.items()}
        self.trained = True
        return self

    def _alpha(self, total, seen_words, lower):
        left = self.d * len(seen_words) / total
        lower_seen = sum(lower(w) for w in seen_words)
        return left / max(1.0 - lower_seen, 1e-12)

    def p1(self, w):
        return (self.c1.get(w, 0) + 1) / (self.n1 + len(self.vocab))

    def p2(self, v, w):
        c = self.c2.get((v, w), 0)
        if c:
            return (c - self.d) / self.ctx2[v]
        return self._alpha2.get(v, 1.0) * self.p1(w)

    def p3(self, u, v, w):
        c = self.c3.get((u, v, w), 0)
        if c:
            return (c - self.d) / self.ctx3[(u, v)]
        return self._alpha3.get((u, v), 1.0) * self.p2(v, w)

    def log_perplexity(self, sentence: str) -> float:
        """Mean negative log-probability per predicted token (including ``</s>``)."""
        if not self.trained:
            raise MetricError("language model is not trained")
        words = [w if w in self.vocab else UNK_W for w in sentence.split()]
        toks = [BOS_W, BOS_W] + words + [EOS_W]
        nll = -sum(math.log(self.p3(toks[i - 2], toks[i - 1], toks[i])) for i in range(2, len(toks)))
        return nll / (len(toks) - 2)


def shuffle_words(sentence: str, rng: np.random.Generator) -> str:
    words = sentence.split()
    return " ".join(words[i] for i in rng.permutation(len(words)))


@dataclass
class FluencyScorer:
    lm: TrigramLM
    threshold: float | None = None
    calibration_accuracy: float | None = None

    def calibrate(self, clean: Sequence[str], seed: int = 0) -> "FluencyScorer":
        """Pick the log-perplexity cut that best separates clean from shuffled text."""
        rng = np.random.default_rng(seed)
        shuffled = [shuffle_words(s, rng) for s in clean]
        scores = np.array([self.lm.log_perplexity(s) for s in list(clean) + shuffled])
        labels = np.array([1] * len(clean) + [0] * len(shuffled))
        cand = np.unique(scores)
        cuts = np.concatenate([[cand[0] - 1.0], (cand[:-1] + cand[1:]) / 2, [cand[-1] + 1.0]])
        acc = [np.mean((scores <= t) == labels) for t in cuts]
        best = int(np.argmax(acc))
        self.threshold = float(cuts[best])
        self.calibration_accuracy = float(acc[best])
        return self

    def __call__(self, pred: str) -> int:
        return fluency(pred, self)


def fluency(pred: str, scorer: FluencyScorer) -> int:
    if scorer.threshold is None:
        raise MetricError("fluency scorer is not calibrated")
    if not pred.strip():
        raise MetricError("cannot score an empty sentence")
    return int(scorer.lm.log_perplexity(pred) <= scorer.threshold)


# --- attribute transfer accuracy --------------------------------------------------

N_HASH = 1 << 18


def _features(text: str) -> list[int]:
    words = ["<s>"] + text.split() + ["</s>"]
    grams = words[1:-1] + [a + " " + b for a, b in zip(words, words[1:])]
    return [zlib.crc32(g.encode("utf-8")) % N_HASH for g in grams]


def _design(texts: Sequence[str]) -> scipy.sparse.csr_matrix:
    rows, cols = [], []
    for i, t in enumerate(texts):
        f = _features(t)
        rows += [i] * len(f)
        cols += f
    data = np.ones(len(rows))
    return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(len(texts), N_HASH))


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    scores = []
    for c in (0, 1):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


@dataclass
class StyleClassifier:
    tags: tuple
    weights: np.ndarray
    bias: float
    dev_macro_f1: float | None = None

    def prob_second(self, texts: Sequence[str]) -> np.ndarray:
        z = _design(texts) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, texts: Sequence[str]) -> list[StyleTag]:
        if not len(texts):
            return []
        return [self.tags[int(p > 0.5)] for p in self.prob_second(texts)]


def train_style_classifier(train_a: StyleCorpus, train_b: StyleCorpus,
                           dev: Sequence[StyleCorpus] = (), l2: float = 1.0, seed: int = 0,
                           shuffle_labels: bool = False) -> StyleClassifier:
    """L2-regularised logistic regression fit by L-BFGS from a zero start.

    ``seed`` only matters with ``shuffle_labels`` (a chance-level control).
    """
    if not len(train_a) or not len(train_b):
        raise MetricError("both training corpora must be non-empty")
    texts = train_a.texts + train_b.texts
    y = np.array([0] * len(train_a) + [1] * len(train_b), dtype=np.float64)
    if shuffle_labels:
        y = np.random.default_rng(seed).permutation(y)
    X = _design(texts)

    def objective(theta):
        w, b = theta[:-1], theta[-1]
        z = X @ w + b
        loss = np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w)
        r = 1.0 / (1.0 + np.exp(-z)) - y
        grad = np.concatenate([X.T @ r + l2 * w, [r.sum()]])
        return loss, grad

    res = scipy.optimize.minimize(objective, np.zeros(N_HASH + 1), jac=True, method="L-BFGS-B",
                                  options={"maxiter": 500})
    clf = StyleClassifier((train_a.style, train_b.style), res.x[:-1], float(res.x[-1]))
    dev = [c for c in dev if len(c)]
    if dev:
        dev_texts = [t for c in dev for t in c.texts]
        y_true = np.array([clf.tags.index(c.style) for c in dev for _ in c.sentences])
        y_pred = np.array([clf.tags.index(t) for t in clf.predict(dev_texts)])
        clf.dev_macro_f1 = macro_f1(y_true, y_pred)
    return clf


def attribute_accuracy(preds: Sequence[str], target: StyleTag, clf: StyleClassifier) -> float:
    if not len(preds):
        raise MetricError("no predictions to score")
    labels = clf.predict(preds)
    return 100.0 * sum(t == target for t in labels) / len(preds)


# --- aggregation -----------------------------------------------------------------

@dataclass(frozen=True)
class SentenceScores:
    cp: float
    flu: int
    ata: int

    def __post_init__(self):
        if not 0.0 <= self.cp <= 1.0 or self.flu not in (0, 1) or self.ata not in (0, 1):
            raise MetricError(f"scores out of range: {self}")


def aggregate(scores: Sequence[SentenceScores]) -> float:
    """Sentence-level aggregate: 100 * mean(ata * flu * cp)."""
    if not len(scores):
        raise MetricError("no scores to aggregate")
    return 100.0 * sum(s.ata * s.flu * s.cp for s in scores) / len(scores)


def delta(model_aggs: Mapping[str, float], ref_aggs: Mapping[str, float]) -> float:
    if not model_aggs or set(model_aggs) != set(ref_aggs):
        raise MetricError(f"task keys differ: {sorted(model_aggs)} vs {sorted(ref_aggs)}")
    tasks = sorted(model_aggs)
    return float(np.mean([model_aggs[t] for t in tasks]) - np.mean([ref_aggs[t] for t in tasks]))


@dataclass
class EvalReport:
    task: str
    n: int
    cp_mean: float
    flu_rate: float
    ata: float
    agg: float
    per_sentence: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


@dataclass
class Evaluator:
    classifier: StyleClassifier
    fluency: FluencyScorer
    embedder: Callable[[str], np.ndarray]

    def sentence_scores(self, sources: Sequence[str], preds: Sequence[str], target: StyleTag) -> list[SentenceScores]:
        if len(sources) != len(preds):
            raise MetricError("sources and predictions differ in length")
        labels = self.classifier.predict(preds)
        out = []
        for s, p, lab in zip(sources, preds, labels):
            if p.strip():
                out.append(SentenceScores(content_preservation(s, p, self.embedder), fluency(p, self.fluency),
                                          int(lab == target)))
            else:
                out.append(SentenceScores(0.0, 0, 0))
        return out

    def evaluate(self, sources: Sequence[str], preds: Sequence[str], target: StyleTag,
                 task: str = "transfer") -> EvalReport:
        scores = self.sentence_scores(sources, preds, target)
        if not scores:
            raise MetricError("nothing to evaluate")
        per = [dict(src=s, pred=p, **asdict(sc)) for s, p, sc in zip(sources, preds, scores)]
        return EvalReport(task, len(scores),
                          cp_mean=float(np.mean([s.cp for s in scores])),
                          flu_rate=float(np.mean([s.flu for s in scores])),
                          ata=100.0 * float(np.mean([s.ata for s in scores])),
                          agg=aggregate(scores), per_sentence=per)


# --- human evaluation ------------------------------------------------------------

def success_rate(ratings: Sequence[Sequence[float]]) -> float:
    """Percent of (cp, flu, ata) rating triples with every value >= 4."""
    if not len(ratings):
        raise MetricError("no ratings")
    ok = 0
    for r in ratings:
        if len(r) != 3 or any(v is None or (isinstance(v, float) and math.isnan(v)) for v in r):
            raise MetricError(f"incomplete rating {r!r}")
        ok += all(v >= 4 for v in r)
    return 100.0 * ok / len(ratings)


def krippendorff_alpha(matrix, metric: str = "ordinal") -> float:
    """Krippendorff's alpha from the coincidence matrix.

    ``matrix`` is items x raters with NaN for missing ratings. Supports the
    ``nominal``, ``ordinal`` and ``interval`` difference functions.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise MetricError("ratings must be a 2-d items x raters matrix")
    units = [row[~np.isnan(row)] for row in m]
    units = [u for u in units if len(u) >= 2]
    if len(units) < 2:
        raise MetricError("need at least two items with two or more ratings")
    values = np.unique(np.concatenate(units))
    if len(values) < 2:
        raise MetricError("alpha is undefined when every rating is identical")
    pos = {v: i for i, v in enumerate(values)}
    V = len(values)
    o = np.zeros((V, V))
    for u in units:
        counts = np.zeros(V)
        for v in u:
            counts[pos[v]] += 1
        o += (np.outer(counts, counts) - np.diag(counts)) / (len(u) - 1)
    n_c = o.sum(1)
    n = n_c.sum()
    if metric == "nominal":
        d2 = 1.0 - np.eye(V)
    elif metric == "interval":
        d2 = (values[:, None] - values[None, :]) ** 2
    elif metric == "ordinal":
        cum = np.cumsum(n_c)
        d2 = np.zeros((V, V))
        for c in range(V):
            for k in range(V):
                lo, hi = min(c, k), max(c, k)
                between = cum[hi] - (cum[lo - 1] if lo else 0.0)
                d2[c, k] = (between - (n_c[c] + n_c[k]) / 2) ** 2
    else:
        raise MetricError(f"unknown metric {metric!r}")
    d_o = (o * d2).sum()
    d_e = (np.outer(n_c, n_c) * d2).sum() / (n - 1)
    if d_e == 0:
        raise MetricError("expected disagreement is zero; alpha undefined")
    return float(1.0 - d_o / d_e)


EXACT_MAX_N = 25


def _exact_signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped. Up to 25 pairs the null distribution of the
    positive rank sum is enumerated exactly (midranks for ties); above that the
    tie-corrected normal approximation is used without continuity correction.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("paired samples must be 1-d and equally long")
    d = a - b
    d = d[d != 0]
    if len(d) == 0:
        raise MetricError("all paired differences are zero")
    n = len(d)
    if n < 6:
        raise MetricError(f"need at least 6 nonzero differences, got {n}")
    ranks = scipy.stats.rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_signed_rank_counts(doubled)
        probs = counts / counts.sum()
        t = int(round(2 * w_plus))
        p = 2 * min(probs[: t + 1].sum(), probs[t:].sum())
    else:
        _, tie_sizes = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_sizes ** 3 - tie_sizes) / 48
        z = (w_plus - mean) / math.sqrt(var)
        p = 2 * scipy.stats.norm.sf(abs(z))
    return float(min(1.0, p))


RATING_METRICS = ("cp", "flu", "ata")


@dataclass
class HumanRatings:
    items: list
    raters: list
    # metric -> items x raters (NaN = missing)
    matrices: dict

    def triples(self) -> list[tuple]:
        out = []
        cp, flu, ata = (self.matrices[m] for m in RATING_METRICS)
        for i in range(len(self.items)):
            for j in range(len(self.raters)):
                vals = (cp[i, j], flu[i, j], ata[i, j])
                if not any(np.isnan(vals)):
                    out.append(vals)
        return out


def load_ratings_csv(path) -> HumanRatings:
    """Read ``item_id, rater_id, cp, flu, ata`` rows (header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, skipinitialspace=True))
    if not rows:
        raise MetricError(f"{path}: no ratings")
    missing = {"item_id", "rater_id", *RATING_METRICS} - set(rows[0])
    if missing:
        raise MetricError(f"{path}: missing columns {sorted(missing)}")
    items = sorted({r["item_id"] for r in rows})
    raters = sorted({r["rater_id"] for r in rows})
    ii = {k: i for i, k in enumerate(items)}
    rj = {k: j for j, k in enumerate(raters)}
    mats = {m: np.full((len(items), len(raters)), np.nan) for m in RATING_METRICS}
    for lineno, r in enumerate(rows, start=2):
        for m in RATING_METRICS:
            raw = (r[m] or "").strip()
            if not raw:
                continue
            v = float(raw)
            if v not in (1, 2, 3, 4, 5):
                raise MetricError(f"{path}:{lineno}: {m}={raw} is not on the 1-5 scale")
            mats[m][ii[r["item_id"]], rj[r["rater_id"]]] = v
    return HumanRatings(items, raters, mats)

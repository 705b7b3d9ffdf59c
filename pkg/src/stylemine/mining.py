"""Cosine indexes, ratio-margin scoring and mutual-top-1 pair extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seqmodel
from .tokenizer import TokenSequence

EPS = 1e-9
_BLOCK = 2048


class MiningError(ValueError):
    pass


def _normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise MiningError("index vectors must be finite and nonzero")
    return vectors / norms


def _topk_rows(sims: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row top-k (descending); ties go to the lower column index."""
    k = min(k, sims.shape[1])
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(sims, order, axis=1), order


@dataclass
class VectorIndex:
    """Unit-normalised vectors, sorted by sentence id.

    ``exact`` mode scans every vector. ``approximate`` mode is an inverted
    file: k-means cells, of which ``n_probe`` nearest are scanned per query.
    """

    vectors: np.ndarray
    ids: np.ndarray
    mode: str = "exact"
    n_lists: int = 0
    n_probe: int = 0
    centroids: np.ndarray | None = field(default=None, repr=False)
    cells: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row_of(self, sentence_ids) -> np.ndarray:
        pos = np.searchsorted(self.ids, sentence_ids)
        if np.any(pos >= len(self.ids)) or np.any(self.ids[np.minimum(pos, len(self.ids) - 1)] != sentence_ids):
            raise MiningError("sentence id not in index")
        return pos

    def similarities(self, queries: np.ndarray) -> np.ndarray:
        """Full cosine matrix between (unnormalised) queries and the index."""
        return _normalize(np.atleast_2d(queries)) @ self.vectors.T

    def search(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Top-k cosines and sentence ids for each query."""
        if len(self) == 0:
            raise MiningError("empty index")
        if k < 1:
            raise MiningError("k must be >= 1")
        q = _normalize(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
        if q.shape[1] != self.dim:
            raise MiningError(f"query dimension {q.shape[1]} != index dimension {self.dim}")
        if self.mode == "exact":
            sims, rows = [], []
            for start in range(0, len(q), _BLOCK):
                s, r = _topk_rows(q[start:start + _BLOCK] @ self.vectors.T, k)
                sims.append(s)
                rows.append(r)
            sims, rows = np.concatenate(sims), np.concatenate(rows)
            return sims, self.ids[rows]
        return self._search_ivf(q, k)

    def _search_ivf(self, q, k):
        k_eff = min(k, len(self))
        out_s = np.full((len(q), k_eff), -np.inf)
        out_i = np.full((len(q), k_eff), -1, dtype=self.ids.dtype)
        cell_sims = q @ self.centroids.T
        probe = np.argsort(-cell_sims, axis=1, kind="stable")[:, : self.n_probe]
        for qi in range(len(q)):
            rows = np.sort(np.concatenate([self.cells[c] for c in probe[qi]]))
            if len(rows) == 0:
                continue
            s = self.vectors[rows] @ q[qi]
            order = np.argsort(-s, kind="stable")[:k_eff]
            out_s[qi, : len(order)] = s[order]
            out_i[qi, : len(order)] = self.ids[rows[order]]
        return out_s, out_i


def _kmeans(x: np.ndarray, n: int, seed: int, iters: int = 20) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    cent = x[rng.choice(len(x), size=n, replace=False)].copy()
    for _ in range(iters):
        assign = np.argmax(x @ cent.T, axis=1)
        for c in range(n):
            members = x[assign == c]
            if len(members):
                v = members.sum(0)
                cent[c] = v / max(np.linalg.norm(v), EPS)
    return cent, np.argmax(x @ cent.T, axis=1)


def build_index(embs, mode: str = "exact", n_lists: int | None = None, n_probe: int | None = None,
                seed: int = 0) -> VectorIndex:
    """Build an index from ``(id, vector)`` pairs, or from an ``(ids, matrix)`` tuple."""
    if isinstance(embs, tuple) and len(embs) == 2 and isinstance(embs[1], np.ndarray):
        ids, mat = np.asarray(embs[0]), np.asarray(embs[1], dtype=np.float64)
    else:
        embs = list(embs)
        if not embs:
            raise MiningError("no vectors to index")
        dims = {len(v) for _, v in embs}
        if len(dims) != 1:
            raise MiningError(f"vectors have mixed dimensions {sorted(dims)}")
        ids = np.array([i for i, _ in embs])
        mat = np.array([np.asarray(v, dtype=np.float64) for _, v in embs])
    if mat.ndim != 2 or len(ids) != len(mat) or len(ids) == 0:
        raise MiningError("ids and vectors do not line up")
    if len(np.unique(ids)) != len(ids):
        raise MiningError("duplicate ids")
    order = np.argsort(ids, kind="stable")
    ids, mat = ids[order], _normalize(mat[order])
    if mode == "exact":
        return VectorIndex(mat, ids)
    if mode != "approximate":
        raise MiningError(f"unknown index mode {mode!r}")
    n_lists = n_lists or max(1, int(round(np.sqrt(len(ids)))))
    n_probe = n_probe or max(1, n_lists // 8)
    cent, assign = _kmeans(mat, min(n_lists, len(ids)), seed)
    cells = [np.flatnonzero(assign == c) for c in range(len(cent))]
    return VectorIndex(mat, ids, "approximate", len(cent), min(n_probe, len(cent)), cent, cells)


def margin_score(x, y, nn_x, nn_y, k: int, eps: float = EPS) -> float:
    """Ratio margin: cos(x, y) over the mean of both k-neighbourhood averages."""
    nn_x, nn_y = np.asarray(nn_x, dtype=np.float64), np.asarray(nn_y, dtype=np.float64)
    if k < 1 or len(nn_x) != k or len(nn_y) != k:
        raise MiningError(f"need k={k} neighbour cosines on both sides, got {len(nn_x)} and {len(nn_y)}")
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    cos = float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))
    denom = max((nn_x.sum() + nn_y.sum()) / (2 * k), eps)
    return cos / denom


# --- extraction ---------------------------------------------------------------

@dataclass
class DualIndex:
    """One side's sentences indexed under both representations."""

    w: VectorIndex
    e: VectorIndex

    def __len__(self):
        return len(self.w)

    @property
    def ids(self):
        return self.w.ids


@dataclass(frozen=True)
class CandidatePair:
    a_id: int
    b_id: int
    score_w: float
    score_e: float


@dataclass
class SpeResult:
    accepted: list
    rejected_a: list
    rejected_b: list


def represent_for_mining(model, seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    # style prefixes are dropped so both sides are embedded the same way
    content = [TokenSequence(s.content) for s in seqs]
    w, e = [], []
    for start in range(0, len(content), 256):
        bw, be = seqmodel.represent_batch(model, content[start:start + 256])
        w.append(bw)
        e.append(be)
    return np.concatenate(w), np.concatenate(e)


def build_dual_index(model, ids, seqs: Sequence[TokenSequence], mode: str = "exact") -> DualIndex:
    w, e = represent_for_mining(model, seqs)
    ids = np.asarray(ids)
    return DualIndex(build_index((ids, w), mode), build_index((ids, e), mode))


class _MarginSpace:
    """Cached k-NN averages for one representation of the (S1, S2) pair."""

    def __init__(self, index_a: VectorIndex, index_b: VectorIndex, k: int):
        if len(index_a) == 0 or len(index_b) == 0:
            raise MiningError("empty index")
        self.a, self.b, self.k = index_a, index_b, k
        self.avg_a = self._knn_avg(index_a, index_b)
        self.avg_b = self._knn_avg(index_b, index_a)

    def _knn_avg(self, src: VectorIndex, other: VectorIndex) -> np.ndarray:
        k = min(self.k, len(other))
        sims, _ = other.search(src.vectors, k)
        return sims.mean(axis=1)

    def margins_from_a(self, rows_a: np.ndarray) -> np.ndarray:
        cos = self.a.vectors[rows_a] @ self.b.vectors.T
        denom = np.maximum((self.avg_a[rows_a, None] + self.avg_b[None, :]) / 2, EPS)
        return cos / denom

    def margins_from_b(self, rows_b: np.ndarray) -> np.ndarray:
        cos = self.b.vectors[rows_b] @ self.a.vectors.T
        denom = np.maximum((self.avg_b[rows_b, None] + self.avg_a[None, :]) / 2, EPS)
        return cos / denom


class Extractor:
    """Mutual-top-1 extraction against a fixed pair of dual indexes.

    Neighbourhood averages are computed once per index pair, so streaming many
    batches through one snapshot costs only the per-batch margin rows.
    """

    def __init__(self, index_a: DualIndex, index_b: DualIndex, k: int = 4):
        if k < 1:
            raise MiningError("k must be >= 1")
        self.index_a, self.index_b = index_a, index_b
        self.spaces = (_MarginSpace(index_a.w, index_b.w, k), _MarginSpace(index_a.e, index_b.e, k))

    def extract(self, batch_ids) -> SpeResult:
        """Mine partners in S2 for the S1 sentences ``batch_ids``."""
        batch_ids = np.asarray(list(batch_ids))
        if len(batch_ids) == 0:
            return SpeResult([], [], [])
        rows_a = self.index_a.w.row_of(batch_ids)
        best_b, best_score = [], []
        for space in self.spaces:
            m = space.margins_from_a(rows_a)
            j = np.argmax(m, axis=1)
            best_b.append(j)
            best_score.append(m[np.arange(len(j)), j])
        agree = best_b[0] == best_b[1]
        candidates = np.unique(best_b[0][agree])
        back = {}
        if len(candidates):
            back_rows = [np.argmax(space.margins_from_b(candidates), axis=1) for space in self.spaces]
            for c, ra_w, ra_e in zip(candidates, *back_rows):
                back[int(c)] = int(ra_w) if ra_w == ra_e else -1
        accepted, rejected_a = [], []
        for i, a_row in enumerate(rows_a):
            jb = int(best_b[0][i])
            if agree[i] and back.get(jb) == a_row:
                accepted.append(CandidatePair(int(batch_ids[i]), int(self.index_b.ids[jb]),
                                              float(best_score[0][i]), float(best_score[1][i])))
            else:
                rejected_a.append(int(batch_ids[i]))
        accepted_b = {p.b_id for p in accepted}
        proposed_b = np.unique(np.concatenate(best_b))
        rejected_b = [int(self.index_b.ids[j]) for j in proposed_b if int(self.index_b.ids[j]) not in accepted_b]
        return SpeResult(accepted, rejected_a, rejected_b)

    def swapped(self) -> "Extractor":
        other = Extractor.__new__(Extractor)
        other.index_a, other.index_b = self.index_b, self.index_a
        other.spaces = tuple(_swap_space(s) for s in self.spaces)
        return other


def _swap_space(space: _MarginSpace) -> _MarginSpace:
    out = _MarginSpace.__new__(_MarginSpace)
    out.a, out.b, out.k = space.b, space.a, space.k
    out.avg_a, out.avg_b = space.avg_b, space.avg_a
    return out


def extract_pairs(model, batch_a: Sequence, index_b: DualIndex, index_a: DualIndex, k: int = 4) -> SpeResult:
    """Accept (a, b) iff each is the other's margin argmax under both representations.

    ``batch_a`` holds S1 sentence ids already present in ``index_a``; ``model``
    must be the snapshot both indexes were built from (it is only used to
    re-embed items of ``batch_a`` given as ``(id, TokenSequence)`` pairs, which
    are checked against the index).
    """
    ids = []
    for item in batch_a:
        if isinstance(item, tuple):
            sid, seq = item
            w, e = represent_for_mining(model, [seq])
            row = index_a.w.row_of([sid])[0]
            if not (np.allclose(_normalize(w)[0], index_a.w.vectors[row])
                    and np.allclose(_normalize(e)[0], index_a.e.vectors[row])):
                raise MiningError("index was not built from this model snapshot")
            ids.append(sid)
        else:
            ids.append(item)
    return Extractor(index_a, index_b, k).extract(ids)

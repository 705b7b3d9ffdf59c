"""Denoising pre-training and the joint extraction / back-translation training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seqmodel
from .corpus import Sentence, StyleCorpus, StyleTag
from .evaluation import Evaluator, attribute_accuracy
from .mining import Extractor, build_dual_index
from .noiser import NoiseConfig, noise
from .tokenizer import BpeModel, TokenSequence

logger = logging.getLogger(__name__)

ORIGINS = ("extracted", "backtranslated", "denoising")

# independent RNG streams per role
_DAE, _ORDER, _BT_SAMPLE = 1, 2, 3


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingPair:
    src: TokenSequence
    tgt: TokenSequence
    direction: tuple  # (source StyleTag, target StyleTag)
    origin: str


def check_pair(pair: TrainingPair, tokenizer: BpeModel) -> None:
    """Assert the structural invariants of a training pair."""
    src_style, tgt_style = pair.direction
    if pair.origin not in ORIGINS:
        raise TrainingError(f"unknown origin {pair.origin!r}")
    if pair.origin == "denoising" and not pair.src.has_style_prefix:
        pass  # style-agnostic denoising
    elif not pair.src.has_style_prefix or pair.src.prefix != tokenizer.tag_id(tgt_style):
        raise TrainingError("source prefix must be the target style tag")
    if pair.tgt.has_style_prefix:
        raise TrainingError("targets carry no prefix")
    if pair.origin == "denoising" and src_style != tgt_style:
        raise TrainingError("denoising pairs stay within one style")
    if pair.origin != "denoising" and src_style == tgt_style:
        raise TrainingError("transfer pairs must cross styles")


@dataclass
class TrainConfig:
    batch_size: int = 50
    max_len: int = 100
    dae_steps: int = 2000
    dae_prefix: str = "own"
    spe_k: int = 4
    use_spe: bool = True
    use_bt: bool = True
    use_dae: bool = True
    bt_rate: float = 1.0
    checkpoint_every: int = 100
    patience: int = 5
    max_steps: int = 3000
    dev_sample: int = 200
    index_mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if not (self.use_spe or self.use_bt):
            raise TrainingError("at least one of use_spe / use_bt is required")
        if self.dae_prefix not in DAE_PREFIXES:
            raise TrainingError(f"unknown DAE prefix mode {self.dae_prefix!r}")
        if not 0.0 <= self.bt_rate <= 1.0:
            raise TrainingError("bt_rate must be in [0, 1]")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise TrainingError("checkpoint steps must increase")
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def __len__(self):
        return len(self.records)


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _train_on(model, pairs, tokenizer, batch_size):
    losses = []
    for batch in _batches(pairs, batch_size):
        for p in batch:
            check_pair(p, tokenizer)
        losses.append(seqmodel.train_step(model, batch))
    return losses


# --- denoising pre-training -------------------------------------------------------

DAE_PREFIXES = ("none", "own")


def dae_pairs(sentences: Sequence[Sentence], tokenizer: BpeModel, noise_cfg: NoiseConfig,
              rng: np.random.Generator, max_len: int = 100, prefix: str = "own") -> list[TrainingPair]:
    """Noised/clean pairs. ``prefix="own"`` prepends each sentence's own style tag to the source,
    ``"none"`` leaves the source untagged."""
    if prefix not in DAE_PREFIXES:
        raise TrainingError(f"unknown DAE prefix mode {prefix!r}")
    out = []
    for s in sentences:
        clean = tokenizer.encode(s.text, s.style if prefix == "own" else None)
        pair = noise(clean, noise_cfg, rng)
        if len(pair.noisy) > max_len or len(clean) > max_len:
            continue
        out.append(TrainingPair(pair.noisy, TokenSequence(clean.content), (s.style, s.style), "denoising"))
    return out


def dae_token_accuracy(model, sentences: Sequence[Sentence], tokenizer: BpeModel,
                       noise_cfg: NoiseConfig, seed: int = 0, prefix: str = "own") -> float:
    """Teacher-forced accuracy of reconstructing clean sentences from noised ones."""
    pairs = dae_pairs(sentences, tokenizer, noise_cfg, np.random.default_rng(seed), model.cfg.max_len, prefix)
    correct = total = 0
    for batch in _batches(pairs, 100):
        c, t = seqmodel.token_accuracy(model, batch)
        correct += c
        total += t
    return correct / total


def pretrain_dae(model, mono: Sequence[StyleCorpus], tokenizer: BpeModel, noise_cfg: NoiseConfig,
                 steps: int, batch_size: int = 50, seed: int = 0, dev: Sequence[Sentence] = (),
                 eval_every: int = 0, history: list | None = None, prefix: str = "own"):
    """Train ``model`` in place to reconstruct noised sentences.

    Sources carry the sentence's own style tag by default. With the copy
    mechanism this yields a model that reproduces clean input under either
    tag, which is the starting point the extraction loop needs.
    """
    if steps <= 0:
        return model
    pool = [s for c in mono for s in c]
    if not pool:
        raise TrainingError("no sentences for denoising pre-training")
    rng = np.random.default_rng([seed, _DAE])
    for step in range(1, steps + 1):
        picks = rng.integers(len(pool), size=batch_size)
        batch = dae_pairs([pool[i] for i in picks], tokenizer, noise_cfg, rng, model.cfg.max_len, prefix)
        if batch:
            loss = seqmodel.train_step(model, batch)
        if eval_every and step % eval_every == 0 and history is not None:
            record = {"step": step, "train_loss": loss}
            if dev:
                dev_pairs = dae_pairs(dev, tokenizer, noise_cfg, np.random.default_rng(seed), model.cfg.max_len,
                                          prefix)
                with seqmodel.torch.no_grad():
                    record["dev_loss"] = float(np.mean([seqmodel.batch_loss(model, b).item()
                                                        for b in _batches(dev_pairs, 100)]))
            history.append(record)
            logger.info("dae step %d %s", step, record)
    return model


# --- back-translation and transfer ----------------------------------------------------

def transfer(model, tokenizer: BpeModel, sentences: Sequence[str], target: StyleTag,
             batch_size: int = 100) -> list[str]:
    out = []
    tag = tokenizer.tag_id(target)
    for chunk in _batches(list(sentences), batch_size):
        srcs = [tokenizer.encode(s) for s in chunk]
        for seq in seqmodel.decode_batch(model, srcs, tag):
            out.append(tokenizer.decode(seq) if seq is not None else "")
    return out


def bt_generate(model, tokenizer: BpeModel, rejected: Sequence[Sentence], opposite: StyleTag,
                batch_size: int = 100) -> tuple[list[TrainingPair], list[str]]:
    """Back-translate rejected sentences into ``opposite`` and pair them with the originals.

    Returns the training pairs and the generated texts (for BT-quality logging).
    """
    if not rejected:
        return [], []
    style = rejected[0].style
    if any(s.style != style for s in rejected):
        raise TrainingError("rejected sentences must share one style")
    tag_own = tokenizer.tag_id(style)
    pairs, texts = [], []
    for chunk in _batches(list(rejected), batch_size):
        clean = [tokenizer.encode(s.text) for s in chunk]
        outs = seqmodel.decode_batch(model, clean, tokenizer.tag_id(opposite))
        for s, tgt, gen in zip(chunk, clean, outs):
            gen_ids = gen.ids if gen is not None else ()
            src = TokenSequence((tag_own,) + tuple(gen_ids)[: model.cfg.max_len - 1], True)
            pairs.append(TrainingPair(src, tgt, (opposite, style), "backtranslated"))
            texts.append(tokenizer.decode(gen) if gen is not None else "")
    return pairs, texts


def dev_attribute_accuracy(model, tokenizer, dev: Sequence[StyleCorpus], clf, limit: int = 0) -> float:
    """ATA over both transfer directions of the dev sets."""
    a, b = dev
    src_a = a.texts[:limit] if limit else a.texts
    src_b = b.texts[:limit] if limit else b.texts
    preds_ab = transfer(model, tokenizer, src_a, b.style)
    preds_ba = transfer(model, tokenizer, src_b, a.style)
    hits = attribute_accuracy(preds_ab, b.style, clf) * len(preds_ab) + \
        attribute_accuracy(preds_ba, a.style, clf) * len(preds_ba)
    return hits / (len(preds_ab) + len(preds_ba))


# --- 3ST loop ------------------------------------------------------------------

def train_3st(model, s1: StyleCorpus, s2: StyleCorpus, dev: Sequence[StyleCorpus], cfg: TrainConfig,
              tokenizer: BpeModel, evaluator: Evaluator):
    """Joint pair extraction, back-translation and transfer training.

    Each pass rebuilds both indexes from the current weights, then streams
    aligned batches of S1 and S2. Training stops when dev ATA has not improved
    for ``cfg.patience`` checkpoints or after ``cfg.max_steps`` updates.
    Returns the best-dev-ATA snapshot and the checkpoint log.
    """
    if not len(s1) or not len(s2):
        raise TrainingError("both training corpora must be non-empty")
    sides = (s1, s2)
    seqs = [[tokenizer.encode(s.text) for s in c] for c in sides]
    by_id = [{s.id: (s, q) for s, q in zip(c, sq)} for c, sq in zip(sides, seqs)]
    order_rng = np.random.default_rng([cfg.seed, _ORDER])
    bt_rng = np.random.default_rng([cfg.seed, _BT_SAMPLE])

    log = TrainLog()
    best_ata, best_state, stale = -1.0, None, 0
    queue: list[TrainingPair] = []
    window = {"src": [], "gen": [], "target": [], "accepted": 0, "rejected": 0}
    updates = 0
    next_ckpt = cfg.checkpoint_every
    done = False

    def checkpoint():
        nonlocal best_ata, best_state, stale, done
        dev_ata = dev_attribute_accuracy(model, tokenizer, dev, evaluator.classifier, cfg.dev_sample)
        record = {"step": updates, "dev_ata": dev_ata, "bt_flu": None, "bt_cp": None, "bt_ata": None,
                  "accepted_count": window["accepted"], "rejected_count": window["rejected"]}
        idx = [i for i, g in enumerate(window["gen"]) if g]
        if window["gen"]:
            scores = []
            for tgt_style in sides:
                sel = [i for i in idx if window["target"][i] == tgt_style.style]
                if sel:
                    scores += evaluator.sentence_scores([window["src"][i] for i in sel],
                                                        [window["gen"][i] for i in sel], tgt_style.style)
            n = len(window["gen"])
            record["bt_flu"] = 100.0 * sum(s.flu for s in scores) / n
            record["bt_cp"] = sum(s.cp for s in scores) / n
            record["bt_ata"] = 100.0 * sum(s.ata for s in scores) / n
        log.append(record)
        logger.info("checkpoint %s", record)
        if dev_ata > best_ata:
            best_ata, best_state, stale = dev_ata, model.clone(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                done = True
        for key in ("src", "gen", "target"):
            window[key] = []
        window["accepted"] = window["rejected"] = 0

    def flush(final=False):
        nonlocal updates, next_ckpt
        while len(queue) >= cfg.batch_size or (final and queue):
            batch = queue[: cfg.batch_size]
            del queue[: cfg.batch_size]
            _train_on(model, batch, tokenizer, cfg.batch_size)
            updates += 1
            if updates >= next_ckpt:
                checkpoint()
                next_ckpt += cfg.checkpoint_every
            if done or updates >= cfg.max_steps:
                return True
        return False

    while not done and updates < cfg.max_steps:
        extractor = None
        if cfg.use_spe:
            idx = [build_dual_index(model, [s.id for s in c], sq, cfg.index_mode) for c, sq in zip(sides, seqs)]
            extractor = Extractor(idx[0], idx[1], cfg.spe_k)
            extractor_ba = extractor.swapped()
        order = [order_rng.permutation([s.id for s in c]) for c in sides]
        n_chunks = -(-min(len(c) for c in sides) // cfg.batch_size)
        seen = set()
        for chunk in range(n_chunks):
            batch_ids = [o[chunk * cfg.batch_size:(chunk + 1) * cfg.batch_size] for o in order]
            rejected = [list(batch_ids[0]), list(batch_ids[1])]
            if extractor is not None:
                res_ab = extractor.extract(batch_ids[0])
                res_ba = extractor_ba.extract(batch_ids[1])
                rejected = [res_ab.rejected_a, res_ba.rejected_a]
                found = [(p.a_id, p.b_id) for p in res_ab.accepted] + [(p.b_id, p.a_id) for p in res_ba.accepted]
                for a_id, b_id in found:
                    if (a_id, b_id) in seen:
                        continue
                    seen.add((a_id, b_id))
                    qa, qb = by_id[0][a_id][1], by_id[1][b_id][1]
                    queue.append(TrainingPair(TokenSequence((tokenizer.tag_id(s2.style),) + qa.ids, True), qb,
                                              (s1.style, s2.style), "extracted"))
                    queue.append(TrainingPair(TokenSequence((tokenizer.tag_id(s1.style),) + qb.ids, True), qa,
                                              (s2.style, s1.style), "extracted"))
                window["accepted"] += len(res_ab.accepted) + len(res_ba.accepted)
                if flush():
                    break
            window["rejected"] += len(rejected[0]) + len(rejected[1])
            if cfg.use_bt:
                for side in (0, 1):
                    rej = [by_id[side][i][0] for i in rejected[side]]
                    if cfg.bt_rate < 1.0:
                        rej = [s for s in rej if bt_rng.random() < cfg.bt_rate]
                    target = sides[1 - side].style
                    pairs, gen = bt_generate(model, tokenizer, rej, target)
                    queue.extend(pairs)
                    window["src"] += [s.text for s in rej]
                    window["gen"] += gen
                    window["target"] += [target] * len(gen)
            if flush():
                break
    if best_state is None:
        checkpoint()
    return best_state if best_state is not None else model, log

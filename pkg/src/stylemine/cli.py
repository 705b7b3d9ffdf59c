"""Command-line entry point: ``python -m stylemine <command> ...``.

Every command resolves one flat config (built-in defaults, then ``--config``
JSON, then flags) and writes a run manifest next to its main output.
Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import torch

from . import corpus as C
from . import evaluation as E
from . import pipeline as P
from . import seqmodel as M
from . import trainer as T
from .mining import Extractor, MiningError, build_dual_index
from .noiser import NoiseConfig
from .tokenizer import BpeModel, TokenizerError, train_bpe

logger = logging.getLogger("stylemine")

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "styles": "pos,neg",
    "min_words": 5,
    "max_words": 25,
    "merge_budget": 500,
    "n_train": 2000,
    "n_dev": 200,
    "n_test": 200,
    "embed_dim": 64,
    "hidden_dim": 128,
    "enc_layers": 1,
    "dec_layers": 1,
    "max_len": 100,
    "lr": 2e-3,
    "clip_norm": 1.0,
    "copy": True,
    "noise_lambda": 3.5,
    "mask_ratio": 0.35,
    "insert_masks": 1,
    "permute": True,
    "dae_prefix": "own",
    "batch_size": 50,
    "dae_steps": 2000,
    "spe_k": 4,
    "use_spe": True,
    "use_bt": True,
    "use_dae": True,
    "bt_rate": 1.0,
    "checkpoint_every": 100,
    "patience": 5,
    "max_steps": 3000,
    "dev_sample": 200,
    "index_mode": "exact",
    "alpha_metric": "ordinal",
}

# ablation switches and their flags
_ABLATIONS = {"use_spe": "--no-spe", "use_bt": "--no-bt", "use_dae": "--no-dae"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- config --------------------------------------------------------------------

def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise C.CorpusError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def style_tags(cfg) -> tuple:
    ids = [s.strip() for s in str(cfg["styles"]).split(",") if s.strip()]
    if len(ids) != 2 or ids[0] == ids[1]:
        raise UsageError("--styles needs exactly two distinct style ids")
    return tuple(C.StyleTag(i, f"<{i}>") for i in ids)


def tag_by_id(tags, style_id: str) -> C.StyleTag:
    for t in tags:
        if t.id == style_id:
            return t
    raise UsageError(f"unknown style {style_id!r}; expected one of {[t.id for t in tags]}")


def model_config(cfg, tok: BpeModel) -> M.ModelConfig:
    return M.ModelConfig(vocab_size=tok.vocab_size, n_specials=tok.n_specials, embed_dim=cfg["embed_dim"],
                         hidden_dim=cfg["hidden_dim"], enc_layers=cfg["enc_layers"], dec_layers=cfg["dec_layers"],
                         max_len=cfg["max_len"], lr=cfg["lr"], clip_norm=cfg["clip_norm"], seed=cfg["seed"],
                         copy=cfg["copy"])


def noise_config(cfg, tok: BpeModel) -> NoiseConfig:
    return NoiseConfig(lam=cfg["noise_lambda"], mask_ratio=cfg["mask_ratio"], insert_masks=cfg["insert_masks"],
                       permute=cfg["permute"], seed=cfg["seed"], boundary_ids=tok.punctuation_ids)


def train_config(cfg) -> T.TrainConfig:
    keys = ("batch_size", "max_len", "dae_steps", "dae_prefix", "spe_k", "use_spe", "use_bt", "use_dae", "bt_rate",
            "checkpoint_every", "patience", "max_steps", "dev_sample", "index_mode", "seed")
    return T.TrainConfig(**{k: cfg[k] for k in keys})


# --- manifest ------------------------------------------------------------------

def _sha256(path: Path) -> str | None:
    if not path.is_file():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(path: Path, command: str, argv, cfg, inputs: dict, outputs: dict, started: float) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": cfg,
        "seed": cfg["seed"],
        "inputs": {k: {"path": str(p), "sha256": _sha256(Path(p))} for k, p in inputs.items()},
        "outputs": {k: {"path": str(p), "sha256": _sha256(Path(p))} for k, p in outputs.items()},
        "tool_version": _version(),
        "versions": {"python": sys.version.split()[0], "numpy": np.__version__, "torch": torch.__version__},
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    write_atomic(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# --- commands --------------------------------------------------------------------

def cmd_synth(args, cfg):
    tags = C.SYNTH_TAGS
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    raw = [C.synth_generate(cfg[f"n_{split}"], cfg["seed"], split) for split in C.SPLITS]
    # same cleaning as the library pipeline, so train never overlaps dev/test
    task = P.prepare(*raw, merge_budget=None, min_words=cfg["min_words"], max_words=cfg["max_words"])
    for split, (a, b) in zip(C.SPLITS, (task.train, task.dev, task.test)):
        for corpus, tag in ((a, tags[0]), (b, tags[1])):
            path = out / f"{split}.{tag.id}.txt"
            C.save_corpus(corpus, path)
            outputs[f"{split}.{tag.id}"] = path
        gold = out / f"{split}.gold.tsv"
        C.write_gold_tsv(a, gold)
        outputs[f"{split}.gold"] = gold
    return {}, outputs, out / "synth.manifest.json"


def cmd_preprocess(args, cfg):
    tags = style_tags(cfg)
    tag = tag_by_id(tags, args.style)
    corpus = C.load_corpus(args.input, tag, args.split)
    corpus = C.preprocess(corpus, tags)
    corpus = C.filter_by_length(corpus, cfg["min_words"], cfg["max_words"])
    if args.lexicon:
        lex = C.Lexicon(Path(args.lexicon).read_text(encoding="utf-8").split())
        corpus = C.lexicon_filter(corpus, lex, args.lexicon_mode)
    corpus = C.dedup(corpus)
    if args.held_out:
        held = [C.preprocess(C.load_corpus(p, tag, "test"), tags) for p in args.held_out]
        corpus = C.remove_overlap(corpus, held)
    C.save_corpus(corpus, args.out)
    inputs = {"input": args.input, **{f"held_out{i}": p for i, p in enumerate(args.held_out or [])}}
    if args.lexicon:
        inputs["lexicon"] = args.lexicon
    return inputs, {"out": args.out}, None


def cmd_train_bpe(args, cfg):
    tags = style_tags(cfg)
    corpora = [C.load_corpus(p, tags[i], "train") for i, p in enumerate((args.corpus_a, args.corpus_b))]
    tok = train_bpe(corpora, cfg["merge_budget"], tags)
    tok.save(args.out)
    return {"corpus_a": args.corpus_a, "corpus_b": args.corpus_b}, {"out": args.out}, None


def _load_pair(tok: BpeModel, path_a, path_b, split):
    return tuple(C.load_corpus(p, tok.style_tags[i], split) for i, p in enumerate((path_a, path_b)))


def cmd_pretrain_dae(args, cfg):
    tok = BpeModel.load(args.bpe)
    train = _load_pair(tok, args.train_a, args.train_b, "train")
    model = M.init(model_config(cfg, tok))
    tcfg = train_config(cfg)
    T.pretrain_dae(model, train, tok, noise_config(cfg, tok), tcfg.dae_steps, tcfg.batch_size, tcfg.seed,
                   prefix=tcfg.dae_prefix)
    M.save_checkpoint(model, args.out)
    inputs = {"bpe": args.bpe, "train_a": args.train_a, "train_b": args.train_b}
    return inputs, {"out": args.out}, None


def _evaluator(tok, embed_model, train, dev, seed) -> E.Evaluator:
    clf = E.train_style_classifier(*train, dev=dev, seed=seed)
    lm = E.TrigramLM().fit(train[0].texts + train[1].texts)
    flu = E.FluencyScorer(lm).calibrate([t for c in dev for t in c.texts], seed=seed)
    return E.Evaluator(clf, flu, E.EmbeddingBagEmbedder.from_model(embed_model, tok, train))


def cmd_train(args, cfg):
    tok = BpeModel.load(args.bpe)
    train = _load_pair(tok, args.train_a, args.train_b, "train")
    dev = _load_pair(tok, args.dev_a, args.dev_b, "dev")
    mcfg = model_config(cfg, tok)
    inputs = {"bpe": args.bpe, "train_a": args.train_a, "train_b": args.train_b, "dev_a": args.dev_a,
              "dev_b": args.dev_b}
    if cfg["use_dae"]:
        if not args.init:
            raise UsageError("--init (a pretrain-dae checkpoint) is required unless --no-dae is given")
        model = M.load_checkpoint(args.init, expect=mcfg)
        inputs["init"] = args.init
    else:
        model = M.init(mcfg)
    embed_model = model
    if args.eval_model:
        embed_model = M.load_checkpoint(args.eval_model)
        inputs["eval_model"] = args.eval_model
    evaluator = _evaluator(tok, embed_model, train, dev, cfg["seed"])
    best, log = T.train_3st(model, train[0], train[1], dev, train_config(cfg), tok, evaluator)
    M.save_checkpoint(best, args.out)
    outputs = {"out": args.out}
    if args.log:
        write_atomic(Path(args.log), log.to_jsonl())
        outputs["log"] = args.log
    return inputs, outputs, None


def cmd_mine_pairs(args, cfg):
    tok = BpeModel.load(args.bpe)
    a, b = _load_pair(tok, args.corpus_a, args.corpus_b, "train")
    model = M.load_checkpoint(args.model)
    ia = build_dual_index(model, [s.id for s in a], [tok.encode(s.text) for s in a], cfg["index_mode"])
    ib = build_dual_index(model, [s.id for s in b], [tok.encode(s.text) for s in b], cfg["index_mode"])
    res = Extractor(ia, ib, cfg["spe_k"]).extract([s.id for s in a])
    text_a = {s.id: s.text for s in a}
    text_b = {s.id: s.text for s in b}
    lines = [f"{p.score_w:.6f}\t{p.score_e:.6f}\t{text_a[p.a_id]}\t{text_b[p.b_id]}\n"
             for p in sorted(res.accepted, key=lambda p: p.a_id)]
    write_atomic(Path(args.out), "".join(lines))
    inputs = {"bpe": args.bpe, "model": args.model, "corpus_a": args.corpus_a, "corpus_b": args.corpus_b}
    return inputs, {"out": args.out}, None


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise C.CorpusError(f"cannot read {path}: {exc}") from exc


def cmd_transfer(args, cfg):
    tok = BpeModel.load(args.bpe)
    target = tag_by_id(tok.style_tags, args.target)
    model = M.load_checkpoint(args.model)
    lines = _read_lines(args.input)
    preds = T.transfer(model, tok, [C.normalize_text(s) for s in lines], target)
    write_atomic(Path(args.out), "".join(p + "\n" for p in preds))
    return {"bpe": args.bpe, "model": args.model, "input": args.input}, {"out": args.out}, None


def cmd_evaluate(args, cfg):
    tok = BpeModel.load(args.bpe)
    target = tag_by_id(tok.style_tags, args.target)
    train = _load_pair(tok, args.train_a, args.train_b, "train")
    dev = _load_pair(tok, args.dev_a, args.dev_b, "dev")
    evaluator = _evaluator(tok, M.load_checkpoint(args.embed_model), train, dev, cfg["seed"])
    src, pred = _read_lines(args.src), _read_lines(args.pred)
    if len(src) != len(pred):
        raise E.MetricError(f"{args.src} has {len(src)} lines but {args.pred} has {len(pred)}")
    report = evaluator.evaluate(src, pred, target, task=args.task)
    write_atomic(Path(args.out), report.to_json() + "\n")
    inputs = {"bpe": args.bpe, "src": args.src, "pred": args.pred, "embed_model": args.embed_model,
              "train_a": args.train_a, "train_b": args.train_b, "dev_a": args.dev_a, "dev_b": args.dev_b}
    return inputs, {"out": args.out}, None


def _item_means(r: E.HumanRatings) -> dict:
    stacked = np.stack([r.matrices[m] for m in E.RATING_METRICS])  # metric x item x rater
    means = np.nanmean(np.nanmean(stacked, axis=0), axis=1)
    return dict(zip(r.items, means))


def cmd_stats(args, cfg):
    ratings = E.load_ratings_csv(args.ratings)
    out = {"n_items": len(ratings.items), "n_raters": len(ratings.raters),
           "success_rate": E.success_rate(ratings.triples()),
           "alpha": {m: E.krippendorff_alpha(ratings.matrices[m], cfg["alpha_metric"]) for m in E.RATING_METRICS},
           "alpha_metric": cfg["alpha_metric"]}
    inputs = {"ratings": args.ratings}
    if args.baseline:
        base = E.load_ratings_csv(args.baseline)
        mine, theirs = _item_means(ratings), _item_means(base)
        shared = sorted(set(mine) & set(theirs))
        out["wilcoxon"] = {"n_items": len(shared),
                           "p_value": E.wilcoxon_signed_rank([mine[i] for i in shared], [theirs[i] for i in shared])}
        inputs["baseline"] = args.baseline
    write_atomic(Path(args.out), json.dumps(out, indent=1, sort_keys=True) + "\n")
    return inputs, {"out": args.out}, None


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "train-bpe": cmd_train_bpe,
    "pretrain-dae": cmd_pretrain_dae, "train": cmd_train, "mine-pairs": cmd_mine_pairs,
    "transfer": cmd_transfer, "evaluate": cmd_evaluate, "stats": cmd_stats,
}


# --- parser ------------------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides")
    for key, default in DEFAULTS.items():
        if key in _ABLATIONS:
            g.add_argument(_ABLATIONS[key], dest=key, action="store_const", const=False, default=None)
        elif isinstance(default, bool):
            g.add_argument("--" + key.replace("_", "-"), dest=key, action=argparse.BooleanOptionalAction,
                           default=None)
        else:
            g.add_argument("--" + key.replace("_", "-"), dest=key, type=type(default), default=None)
    p.add_argument("--config", help="flat JSON file of config keys")
    p.add_argument("--manifest", help="manifest path (default: <main output>.manifest.json)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stylemine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _config_flags(p)
        return p

    p = add("synth", "write the synthetic two-style task (train/dev/test + gold TSVs)")
    p.add_argument("--out-dir", required=True)

    p = add("preprocess", "normalise, length-filter, lexicon-filter and dedup one corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--split", default="train", choices=C.SPLITS)
    p.add_argument("--lexicon")
    p.add_argument("--lexicon-mode", default="exclude", choices=("require", "exclude"))
    p.add_argument("--held-out", action="append", help="drop sentences also found in this file (repeatable)")
    p.add_argument("--out", required=True)

    p = add("train-bpe", "learn a joint BPE vocabulary over both corpora")
    p.add_argument("--corpus-a", required=True)
    p.add_argument("--corpus-b", required=True)
    p.add_argument("--out", required=True)

    p = add("pretrain-dae", "denoising pre-training of a fresh model")
    for flag in ("--bpe", "--train-a", "--train-b", "--out"):
        p.add_argument(flag, required=True)

    p = add("train", "joint pair extraction, back-translation and transfer training")
    for flag in ("--bpe", "--train-a", "--train-b", "--dev-a", "--dev-b", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--init", help="DAE checkpoint to start from")
    p.add_argument("--eval-model", help="checkpoint whose embeddings back the CP metric (default: --init)")
    p.add_argument("--log", help="TrainLog JSONL output")

    p = add("mine-pairs", "one extraction pass over both corpora; TSV score_w, score_e, src, tgt")
    for flag in ("--bpe", "--model", "--corpus-a", "--corpus-b", "--out"):
        p.add_argument(flag, required=True)

    p = add("transfer", "rewrite sentences into a target style")
    for flag in ("--bpe", "--model", "--target", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--in", dest="input", required=True)

    p = add("evaluate", "CP / FLU / ATA / AGG report for predictions")
    for flag in ("--bpe", "--src", "--pred", "--target", "--embed-model", "--train-a", "--train-b", "--dev-a",
                 "--dev-b", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--task", default="transfer")

    p = add("stats", "human-rating statistics: alpha, success rate, Wilcoxon vs a baseline")
    p.add_argument("--ratings", required=True)
    p.add_argument("--baseline")
    p.add_argument("--out", required=True)
    return parser


DATA_ERRORS = (C.CorpusError, TokenizerError, M.ModelError, MiningError, E.MetricError, T.TrainingError,
               ValueError, OSError)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.time()
    try:
        cfg = resolve_config(args)
        torch.set_num_threads(max(1, int(cfg["threads"])))
        torch.manual_seed(cfg["seed"])
        inputs, outputs, manifest = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"stylemine {args.command}: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"stylemine {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.manifest:
        manifest = Path(args.manifest)
    elif manifest is None:
        manifest = Path(str(outputs["out"]) + ".manifest.json")
    write_manifest(manifest, args.command, argv, cfg, inputs, outputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Style transfer without parallel data, end to end
================================================

1. generate two non-parallel review corpora (positive / negative),
2. pre-train a denoising autoencoder on both,
3. run the joint loop: mine pairs -> train -> back-translate rejections,
4. compare against the same loop with pair mining switched off.

Takes a few minutes on one CPU core. Pass a seed as the first argument.
"""
import sys
import time

import numpy as np
import torch

from stylemine import corpus as C
from stylemine import pipeline as P
from stylemine import seqmodel as M
from stylemine import trainer as T
from stylemine.noiser import NoiseConfig

torch.set_num_threads(1)
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
t0 = time.time()

task = P.synth_task(seed=seed)
tok = task.tokenizer
pos, neg = task.train
print(f"train: {len(pos)} positive, {len(neg)} negative; BPE vocabulary {tok.vocab_size}")
print("  e.g.", pos.texts[0], "|", neg.texts[0])

# how much hidden parallelism is there? (never shown to the trainer)
gold_in_b = np.mean([C.synth_gold(t) in set(neg.texts) for t in pos.texts])
print(f"  {gold_in_b:.0%} of positive sentences have their exact counterpart in the negative corpus")

# --- denoising pre-training
cfg = T.TrainConfig(seed=seed)
model = M.init(M.ModelConfig(vocab_size=tok.vocab_size, n_specials=tok.n_specials, seed=seed))
noise_cfg = NoiseConfig(boundary_ids=tok.punctuation_ids, seed=seed)
T.pretrain_dae(model, task.train, tok, noise_cfg, cfg.dae_steps, cfg.batch_size, seed)
dev = [s for c in task.dev for s in c]
print(f"\nDAE: {cfg.dae_steps} steps, dev reconstruction accuracy "
      f"{T.dae_token_accuracy(model, dev, tok, noise_cfg):.3f} ({time.time() - t0:.0f}s)")

evaluator = P.build_evaluator(model, task, seed)
probe = task.test[0].texts[:3]
print("DAE model asked for negative:", T.transfer(model, tok, probe[:1], neg.style)[0])


def run(name, **switches):
    start = M.init(model.cfg)
    start.net.load_state_dict(model.net.state_dict())
    best, log = T.train_3st(start, pos, neg, task.dev, T.TrainConfig(seed=seed, **switches), tok, evaluator)
    a, b = task.test
    preds = T.transfer(best, tok, a.texts, b.style) + T.transfer(best, tok, b.texts, a.style)
    srcs = a.texts + b.texts
    gold = np.mean([p == C.synth_gold(s) for s, p in zip(srcs, preds)])
    report = evaluator.evaluate(srcs[:len(a)], preds[:len(a)], b.style)
    print(f"\n{name}: {log.records[-1]['step']} updates, gold match {gold:.2f}, "
          f"pos->neg ATA {report.ata:.1f} CP {report.cp_mean:.3f} FLU {report.flu_rate:.3f}")
    print("  BT-ATA per checkpoint:", [round(r["bt_ata"]) for r in log.records if r["bt_ata"] is not None])
    print("  accepted pairs per window:", [r["accepted_count"] for r in log.records])
    for s, p in zip(probe, T.transfer(best, tok, probe, neg.style)):
        print(f"  {s}\n    -> {p}")


run("full loop")
run("without pair mining", use_spe=False)
print(f"\ntotal {time.time() - t0:.0f}s")

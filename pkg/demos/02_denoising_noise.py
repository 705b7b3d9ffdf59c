"""
What the denoising objective sees
=================================

BART-style noise on a tokenized sentence: Poisson(3.5) spans collapse into
single <mask> tokens until 35% of the content is masked, one extra mask is
inserted, and punctuation-delimited segments are shuffled.
"""
import numpy as np

from stylemine import pipeline as P
from stylemine.noiser import NoiseConfig, mask_spans, noise
from stylemine.tokenizer import MASK_ID

task = P.synth_task(n_train=300, n_dev=20, n_test=20, seed=0)
tok = task.tokenizer
cfg = NoiseConfig(boundary_ids=tok.punctuation_ids)
rng = np.random.default_rng(42)

for sent in list(task.train[0])[:4]:
    clean = tok.encode(sent.text, sent.style)
    pair = noise(clean, cfg, rng)
    print("clean:", tok.decode(pair.clean), f"({len(clean.content)} tokens)")
    print("noisy:", " ".join(tok.token(i) for i in pair.noisy.ids))
    print()

# the span loop masks exactly ceil(0.35 * n) tokens, so short sentences
# round up a little and long ones approach the configured ratio
for n in (6, 12, 20, 40):
    out, consumed = mask_spans(list(range(100, 100 + n)), cfg, rng)
    print(f"n={n:2d}: masked {consumed:2d} tokens ({consumed / n:.3f}) in {out.count(MASK_ID)} spans")

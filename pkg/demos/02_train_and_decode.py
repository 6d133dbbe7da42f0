"""
Train a small insertion parser
==============================

Generates a synthetic corpus, trains a small model for a few minutes on the
CPU and decodes a held-out query step by step.  Pass a step count as the
first argument to train longer (about 6000 steps is enough to get most of
the test set exactly right).
"""

import logging
import sys

from insertion_parser import parse_ir as ir
from insertion_parser.corpus import build_vocab, default_grammar, generate_synthetic
from insertion_parser.decoding import DecodeConfig, ModelScorer, evaluate, greedy_insert_step, initial_hypothesis
from insertion_parser.model import ModelConfig
from insertion_parser.training import TrainConfig, build_model, fit

logging.basicConfig(level=logging.INFO, format="%(message)s")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500

grammar = default_grammar()
train = generate_synthetic(grammar, 5000, seed=7)
test = generate_synthetic(grammar, 200, seed=8)
vocab = build_vocab(train)
print(f"{len(train)} training queries, {vocab.V} tags, {len(vocab.source_words)} source words")

model = build_model(vocab, ModelConfig(d_enc=64, d_dec=64, dec_layers=2, dropout=0.0))
fit(model, train, vocab, TrainConfig(batch_size=64, max_steps=steps, lr_factor=1.0, log_every=250))

# one query, one insertion step at a time
scorer = ModelScorer(model, vocab)
ex = test[0]
cfg = DecodeConfig(penalty=1.0)
hyp = initial_hypothesis(ex.query.tokens, cfg.mode)
print("query:", " ".join(ex.query.tokens))
while True:
    hyp, inserted = greedy_insert_step(scorer, hyp, ex.query.tokens, cfg)
    if not inserted:
        break
    print(f"  +{inserted:2d}  {ir.render(hyp)}")
print("gold:      ", ir.render(ex.target))

for mode in ("scratch", "input_src"):
    r = evaluate(scorer, test, DecodeConfig(mode=mode, penalty=1.0))
    print(f"{mode:9s} EM={r['em']:.3f} IC={r['ic']:.3f} steps={r['avg_steps']:.2f} "
          f"body={r['avg_target_len']:.1f} invalid={r['invalid_rate']:.3f}")

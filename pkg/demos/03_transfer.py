"""
Zero-shot transfer to a reordered language
==========================================

Language B has its own lexicon and reverses the words inside every slot.
We train on language A only and parse B by mapping each B word to its A
counterpart before encoding, so the encoder sees familiar words in an
unfamiliar order.  With the copy mechanism a pointer token carries the
encoder state of the word it points to; without it, a learned embedding of
the source index.

Expect a large drop from A to B: the model finds slot boundaries partly from
the order of the filler words, which B reverses.  Starting from the source
(input_src) helps.  On this reordering copying does not reliably help, since
every constituent keeps its source positions.
"""

import sys

from insertion_parser.corpus import build_vocab, default_grammar, derive_language, generate_synthetic
from insertion_parser.decoding import DecodeConfig, ModelScorer, evaluate
from insertion_parser.model import ModelConfig
from insertion_parser.training import TrainConfig, build_model, fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500

grammar_a = default_grammar()
grammar_b, b_to_a = derive_language(grammar_a, word_order="reverse_spans", seed=1)
train = generate_synthetic(grammar_a, 5000, seed=7)
test_b = generate_synthetic(grammar_b, 300, seed=8)
vocab = build_vocab(train)
print("A:", " ".join(generate_synthetic(grammar_a, 1, seed=8)[0].query.tokens))
print("B:", " ".join(test_b[0].query.tokens))

for copy in (True, False):
    model = build_model(vocab, ModelConfig(d_enc=64, d_dec=64, dec_layers=2, dropout=0.0, copy_enabled=copy))
    fit(model, train, vocab, TrainConfig(batch_size=64, max_steps=steps, lr_factor=1.0))
    scorer = ModelScorer(model, vocab, translate=b_to_a)
    for mode in ("scratch", "input_src"):
        r = evaluate(scorer, test_b, DecodeConfig(mode=mode, penalty=1.0))
        print(f"copy={'on ' if copy else 'off'} {mode:9s} EM on B = {r['em']:.3f}")

"""
Balanced insertion order
========================

A target with n tokens after <s> can be built in ceil(log2(n+1)) parallel
insertion steps if every gap inserts the middle of what it still misses.
This script prints that schedule for a small parse and replays it through
the greedy decoder with a scorer that reads the gold target.
"""

import numpy as np

from insertion_parser import parse_ir as ir
from insertion_parser.corpus import Example, build_vocab
from insertion_parser.decoding import DecodeConfig, OracleScorer, decode_batch
from insertion_parser.oracle import oracle_schedule, schedule_states, steps_lower_bound, tree_weights

ex = Example.from_json({
    "tokens": "play the new song by adele".split(),
    "target": "[IN:PLAY_MUSIC @0 @1 @2 [SL:TYPE @3 ] @4 [SL:ARTIST @5 ] ]",
})
print("target :", ir.render(ex.target))
print("n      :", ex.n)

# gold weights over a run of 5 missing tokens, sharp and flat
for tau in (0.1, 1.0, 10.0):
    print(f"tau={tau:<4}", np.round(tree_weights(5, tau), 3))

# the schedule: which target positions appear at each step
for step, state in enumerate(schedule_states(ex.target)):
    print(f"step {step}:", ir.render(tuple(ex.target[p] for p in state)) or "(empty)")
print("steps:", len(oracle_schedule(ex.target)), "lower bound:", steps_lower_bound(ex.n))

# the decoder gets the same thing when the scorer is the oracle
vocab = build_vocab([ex])
for mode in ("scratch", "input_src"):
    (pred, st), = decode_batch(OracleScorer(vocab, [ex]), [ex.query.tokens], DecodeConfig(mode=mode))
    print(f"{mode:9s} steps={st.steps_used} per step={st.tokens_per_step} match={pred == ex.target}")

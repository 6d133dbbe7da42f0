"""Insertion-based semantic parsing with pointer tokens.

Modules
-------
parse_ir    tokens, trees, linearisation and validation
corpus      synthetic grammars, loaders and vocabularies
oracle      subsequence sampling, slot weights, balanced insertion schedule
model       encoder/decoder network with copy and pointer heads
training    batches, KL slot loss, Noam schedule, gradient checks
decoding    parallel greedy insertion decoding and evaluation
"""

from .parse_ir import MalformedSequence, SourceQuery, delinearize, linearize, render
from .corpus import Example, GrammarSpec, Vocabulary, build_vocab, default_grammar, generate_synthetic
from .oracle import Weighting, oracle_schedule, sample_subsequence, tree_weights
from .model import InsertionParser, ModelConfig
from .training import TrainConfig, fit
from .checkpoint import Checkpoint, load_model
from .decoding import DecodeConfig, ModelScorer, OracleScorer, decode, evaluate

__version__ = "0.1.0"

__all__ = [
    "MalformedSequence", "SourceQuery", "delinearize", "linearize", "render",
    "Example", "GrammarSpec", "Vocabulary", "build_vocab", "default_grammar", "generate_synthetic",
    "Weighting", "oracle_schedule", "sample_subsequence", "tree_weights",
    "InsertionParser", "ModelConfig", "TrainConfig", "fit", "Checkpoint", "load_model",
    "DecodeConfig", "ModelScorer", "OracleScorer", "decode", "evaluate",
]

"""Parallel greedy insertion decoding and exact-match evaluation.

Decoding talks to a *scorer*: any object with a ``vocab`` attribute and a
``score(queries, hyps)`` method returning, per item, an array of shape
``(T-1, V+m)`` of log-probabilities over joint ids.  :class:`ModelScorer`
wraps a trained network; :class:`OracleScorer` reads gold targets and is
used to check the decoding loop itself.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import parse_ir as ir
from .oracle import Weighting, align, build_slot_distribution, candidates_from_positions, schedule_states
from .model import pad_batch

MODES = ("scratch", "input_src")


@dataclass
class DecodeConfig:
    mode: str = "scratch"
    penalty: float = 0.0
    max_steps: int = 64
    max_len: int = 128

    def __post_init__(self):
        self.mode = self.mode.replace("-", "_")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")


@dataclass
class DecodeStats:
    steps_used: int = 0          # insertion steps, final all-no-insert pass excluded
    model_calls: int = 0         # every scorer call, including that pass
    tokens_per_step: list = field(default_factory=list)
    terminated: str = "natural"  # natural | step_cap | length_cap
    valid: bool = True


class ModelScorer:
    def __init__(self, model, vocab, translate: dict | None = None, batch_size: int = 128):
        self.model = model
        self.vocab = vocab
        self.translate = translate
        self.batch_size = batch_size

    def source_ids(self, words):
        if self.translate:
            words = [self.translate.get(w, w) for w in words]
        return self.vocab.source_ids(words)

    @torch.no_grad()
    def score(self, queries: Sequence, hyps: Sequence) -> list[np.ndarray]:
        self.model.eval()
        out = []
        for start in range(0, len(queries), self.batch_size):
            qs = queries[start:start + self.batch_size]
            hs = hyps[start:start + self.batch_size]
            src = [self.source_ids(q) for q in qs]
            hyp = [[self.vocab.joint_id(t) for t in h] for h in hs]
            batch = pad_batch(src, hyp, self.vocab.pad_id)
            logp = self.model(*batch).numpy()
            V = self.vocab.V
            for b, (s, h) in enumerate(zip(src, hyp)):
                out.append(logp[b, :len(h) - 1, :V + len(s)])
        return out


class OracleScorer:
    """Scores hypotheses from the gold target of each query.

    ``mode="schedule"`` puts all mass on the balanced-tree choice for each
    gap (left median), so decoding replays :func:`oracle_schedule`.
    ``mode="weights"`` returns the training target distribution instead.
    """

    def __init__(self, vocab, examples, mode: str = "schedule", weighting: Weighting = Weighting()):
        self.vocab = vocab
        self.mode = mode
        self.weighting = weighting
        self.gold = {tuple(ex.query.tokens): tuple(ex.target) for ex in examples}

    def _positions(self, hyp, target):
        if self.mode == "schedule":
            for state in schedule_states(target):
                if len(state) == len(hyp) and all(target[p] == t for p, t in zip(state, hyp)):
                    return state
        return align(hyp, target)

    def score(self, queries, hyps):
        V = self.vocab.V
        out = []
        for q, hyp in zip(queries, hyps):
            target = self.gold[tuple(q)]
            logp = np.full((len(hyp) - 1, V + len(q)), -np.inf)
            pos = self._positions(tuple(hyp), target)
            if pos is None:
                logp[:, self.vocab.no_insert_id] = 0.0
                out.append(logp)
                continue
            for c in candidates_from_positions(target, pos):
                if self.mode == "schedule":
                    dist = ({self.vocab.no_insert_id: 1.0} if c.i == 0
                            else {self.vocab.joint_id(c.tokens[(c.i - 1) // 2]): 1.0})
                else:
                    dist = build_slot_distribution(c, self.weighting, self.vocab)
                for j, p in dist.items():
                    logp[c.slot, j] = np.log(p)
            out.append(logp)
        return out


def initial_hypothesis(query, mode: str) -> tuple:
    if mode == "input_src":
        return (ir.BOS, *(ir.ptr(i) for i in range(len(query))), ir.EOS)
    return (ir.BOS, ir.EOS)


def choose_insertions(logp: np.ndarray, vocab, cfg: DecodeConfig) -> np.ndarray:
    """Per-slot argmax joint id after the no-insertion penalty and mode masking."""
    logp = np.array(logp, dtype=np.float64, copy=True)
    logp[:, vocab.no_insert_id] -= cfg.penalty
    if cfg.mode == "input_src":
        logp[:, vocab.V:] = -np.inf
    for special in (ir.PAD, ir.UNK, ir.BOS, ir.EOS):
        logp[:, vocab.tag_id(special)] = -np.inf
    # np.argmax returns the first maximum: ties go to the lowest id
    return logp.argmax(axis=1)


def apply_insertions(hyp: tuple, choice: np.ndarray, vocab) -> tuple[tuple, int]:
    out = [hyp[0]]
    inserted = 0
    for l, j in enumerate(choice):
        if j != vocab.no_insert_id:
            out.append(vocab.token(int(j)))
            inserted += 1
        out.append(hyp[l + 1])
    return tuple(out), inserted


def greedy_insert_step(scorer, hyp: Sequence, query, cfg: DecodeConfig) -> tuple[tuple, int]:
    logp = scorer.score([tuple(query)], [tuple(hyp)])[0]
    return apply_insertions(tuple(hyp), choose_insertions(logp, scorer.vocab, cfg), scorer.vocab)


def decode_batch(scorer, queries: Sequence, cfg: DecodeConfig = DecodeConfig()) -> list[tuple[tuple, DecodeStats]]:
    """Decode several queries in lockstep; each behaves exactly as :func:`decode`."""
    queries = [tuple(q) for q in queries]
    hyps = [initial_hypothesis(q, cfg.mode) for q in queries]
    stats = [DecodeStats() for _ in queries]
    active = list(range(len(queries)))
    while active:
        scores = scorer.score([queries[i] for i in active], [hyps[i] for i in active])
        still = []
        for i, logp in zip(active, scores):
            st = stats[i]
            st.model_calls += 1
            choice = choose_insertions(logp, scorer.vocab, cfg)
            new, inserted = apply_insertions(hyps[i], choice, scorer.vocab)
            if inserted == 0:
                st.terminated = "natural"
                continue
            if len(new) > cfg.max_len:
                st.terminated = "length_cap"
                continue
            hyps[i] = new
            st.steps_used += 1
            st.tokens_per_step.append(inserted)
            if len(new) == cfg.max_len:
                st.terminated = "length_cap"
            elif st.steps_used >= cfg.max_steps:
                st.terminated = "step_cap"
            else:
                still.append(i)
        active = still
    for q, h, st in zip(queries, hyps, stats):
        st.valid = ir.is_valid(h, q)
    return list(zip(hyps, stats))


def decode(scorer, query, cfg: DecodeConfig = DecodeConfig()) -> tuple[tuple, DecodeStats]:
    return decode_batch(scorer, [query], cfg)[0]


def evaluate(scorer, examples, cfg: DecodeConfig = DecodeConfig(), hist_len: int = 9) -> dict:
    """EM / IC plus step statistics over ``examples``."""
    results = decode_batch(scorer, [ex.query.tokens for ex in examples], cfg)
    n = len(examples)
    em = ic = invalid = 0
    steps, calls, pred_len, gold_len = [], [], [], []
    per_step = defaultdict(list)
    terminated = defaultdict(int)
    for ex, (pred, st) in zip(examples, results):
        em += ir.exact_match(pred, ex.target)
        gold_intent = ir.intent_of(ex.target)
        ic += gold_intent is not None and ir.intent_of(pred) == gold_intent
        invalid += not st.valid
        steps.append(st.steps_used)
        calls.append(st.model_calls)
        pred_len.append(len(pred) - 2)
        gold_len.append(ex.n)
        terminated[st.terminated] += 1
        for k, c in enumerate(st.tokens_per_step):
            per_step[k].append(c)
    return {
        "n": n,
        "em": em / n,
        "ic": ic / n,
        "avg_steps": float(np.mean(steps)),
        "avg_steps_inclusive": float(np.mean(calls)),
        "tokens_per_step": [float(np.mean(per_step[k])) if per_step[k] else 0.0 for k in range(hist_len)],
        "invalid_rate": invalid / n,
        "avg_pred_len": float(np.mean(pred_len)),
        "avg_target_len": float(np.mean(gold_len)),
        "terminated": dict(terminated),
        "mode": cfg.mode,
        "penalty": cfg.penalty,
    }

"""Model-free insertion combinatorics.

Everything here works on plain token tuples: sampling partial hypotheses of a
target, reading off what could be inserted into each gap, weighting those
candidates, and the ideal balanced-tree insertion schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .parse_ir import Token


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    # positions of ``tokens`` inside the generating target, when known
    positions: tuple | None = None

    @property
    def T(self) -> int:
        return len(self.tokens)

    @property
    def num_slots(self) -> int:
        return len(self.tokens) - 1


@dataclass(frozen=True)
class SlotCandidates:
    slot: int
    tokens: tuple

    @property
    def i(self) -> int:
        return len(self.tokens)


def candidates_from_positions(target: Sequence[Token], positions: Sequence[int]) -> list[SlotCandidates]:
    """Target tokens strictly between each pair of adjacent kept positions."""
    return [
        SlotCandidates(l, tuple(target[a + 1:b]))
        for l, (a, b) in enumerate(zip(positions[:-1], positions[1:]))
    ]


def hypothesis_from_positions(target: Sequence[Token], positions: Sequence[int]) -> Hypothesis:
    positions = tuple(int(p) for p in positions)
    return Hypothesis(tuple(target[p] for p in positions), positions)


def sample_subsequence(target: Sequence[Token], rng: np.random.Generator, k: int | None = None,
                       keep: Sequence[int] = ()) -> tuple[Hypothesis, list[SlotCandidates]]:
    """Draw a random order-preserving partial hypothesis of ``target``.

    The body length ``k`` is uniform on ``0..n`` and, given ``k``, the kept
    body positions are a uniform ``k``-subset.  Positions in ``keep`` (1-based
    target positions) are always retained and the draw happens over the rest.
    """
    target = tuple(target)
    n = len(target) - 2
    forced = sorted(set(int(p) for p in keep))
    free = [p for p in range(1, n + 1) if p not in set(forced)]
    if k is None:
        k = int(rng.integers(0, len(free) + 1))
    elif not 0 <= k <= len(free):
        raise DomainError(f"k={k} outside 0..{len(free)}")
    chosen = rng.choice(len(free), size=k, replace=False) if k else []
    body = sorted(forced + [free[c] for c in chosen])
    positions = [0, *body, n + 1]
    return hypothesis_from_positions(target, positions), candidates_from_positions(target, positions)


def interleave(hyp: Hypothesis, cands: Sequence[SlotCandidates]) -> tuple:
    out = [hyp.tokens[0]]
    for c, tok in zip(cands, hyp.tokens[1:]):
        out.extend(c.tokens)
        out.append(tok)
    return tuple(out)


def tree_weights(i: int, tau: float) -> np.ndarray:
    """Softmax over negative distance from the run's centre, temperature ``tau``."""
    if i < 1:
        raise DomainError("need at least one candidate")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    d = np.abs(np.arange(i) - (i - 1) / 2.0)
    z = -d / tau
    w = np.exp(z - z.max())
    return w / w.sum()


def uniform_weights(i: int) -> np.ndarray:
    if i < 1:
        raise DomainError("need at least one candidate")
    return np.full(i, 1.0 / i)


@dataclass(frozen=True)
class Weighting:
    kind: str = "tree"
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in ("tree", "uniform"):
            raise DomainError(f"unknown weighting {self.kind!r}")

    def __call__(self, i: int) -> np.ndarray:
        return tree_weights(i, self.tau) if self.kind == "tree" else uniform_weights(i)

    @classmethod
    def parse(cls, text: str) -> "Weighting":
        """``"uniform"``, ``"tree"`` or ``"tree:0.5"``."""
        kind, _, tau = text.partition(":")
        return cls(kind, float(tau) if tau else 1.0)

    def __str__(self):
        return "uniform" if self.kind == "uniform" else f"tree:{self.tau:g}"


def build_slot_distribution(cands: SlotCandidates, weighting: Weighting, vocab) -> dict[int, float]:
    """Gold distribution over joint token ids for one slot.

    Repeated candidate tokens pool their positional weights on one id.
    """
    if cands.i == 0:
        return {vocab.no_insert_id: 1.0}
    probs: dict[int, float] = {}
    for tok, w in zip(cands.tokens, weighting(cands.i)):
        j = vocab.joint_id(tok)
        probs[j] = probs.get(j, 0.0) + float(w)
    return probs


def oracle_schedule(target: Sequence[Token]) -> list[list[int]]:
    """Balanced-tree insertion order as lists of target positions per step.

    Every non-empty gap receives its median candidate (left median for even
    runs) at each step.
    """
    n = len(target) - 2
    runs = [(1, n)] if n > 0 else []  # inclusive target position ranges
    steps = []
    while runs:
        step, nxt = [], []
        for lo, hi in runs:
            mid = lo + (hi - lo) // 2
            step.append(mid)
            if lo <= mid - 1:
                nxt.append((lo, mid - 1))
            if mid + 1 <= hi:
                nxt.append((mid + 1, hi))
        steps.append(step)
        runs = nxt
    return steps


def schedule_states(target: Sequence[Token]) -> list[tuple[int, ...]]:
    """Kept-position sets before each schedule step, plus the final full set."""
    n = len(target) - 2
    kept = {0, n + 1}
    states = [tuple(sorted(kept))]
    for step in oracle_schedule(target):
        kept.update(step)
        states.append(tuple(sorted(kept)))
    return states


def steps_lower_bound(n: int) -> int:
    """ceil(log2(n + 1)), exactly, in integers."""
    if n < 0:
        raise DomainError("n must be non-negative")
    return int(n).bit_length()


def align(hyp_tokens: Sequence[Token], target: Sequence[Token]) -> tuple[int, ...] | None:
    """Leftmost embedding of ``hyp_tokens`` in ``target``, or None if not a subsequence."""
    out, j = [], 0
    for tok in hyp_tokens:
        while j < len(target) and target[j] != tok:
            j += 1
        if j == len(target):
            return None
        out.append(j)
        j += 1
    return tuple(out)

import itertools
import math
import random

import numpy as np
import pytest
from scipy import stats

from insertion_parser import parse_ir as ir
from insertion_parser.corpus import Example, build_vocab
from insertion_parser.oracle import (
    DomainError, Weighting, build_slot_distribution, candidates_from_positions, hypothesis_from_positions,
    interleave, oracle_schedule, sample_subsequence, schedule_states, steps_lower_bound, tree_weights,
    uniform_weights, SlotCandidates,
)

from test_parse_ir import random_tree

TAUS = (0.1, 0.5, 1.0, 1.5, 2.0)


def body_target(n):
    return (ir.BOS, *(ir.ptr(i) for i in range(n)), ir.EOS)


# -- weights ------------------------------------------------------------------

def test_tree_weights_small_cases():
    assert tree_weights(1, 0.3) == pytest.approx([1.0])
    assert tree_weights(2, 1.0) == pytest.approx([0.5, 0.5])
    # softmax of -[1, 0, 1]: e^-1 / (1 + 2 e^-1) and 1 / (1 + 2 e^-1)
    z = 1 + 2 * math.exp(-1)
    assert tree_weights(3, 1.0) == pytest.approx([math.exp(-1) / z, 1 / z, math.exp(-1) / z], abs=1e-12)
    assert tree_weights(3, 1.0) == pytest.approx([0.21194, 0.57612, 0.21194], abs=1e-5)


@pytest.mark.parametrize("tau", TAUS)
def test_tree_weights_shape_properties(tau):
    for i in range(1, 65):
        w = tree_weights(i, tau)
        assert abs(w.sum() - 1) < 1e-9
        np.testing.assert_allclose(w, w[::-1], rtol=0, atol=1e-15)
        assert int(np.argmax(w)) == (i - 1) // 2
        # unimodal: non-decreasing up to the centre
        half = w[: (i + 1) // 2]
        assert np.all(np.diff(half) >= 0)


def test_larger_tau_flattens():
    for i in range(3, 65):
        gaps = [np.ptp(tree_weights(i, t)) for t in (0.1, 0.5, 1.0, 1.5, 2.0, 10.0)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_uniform_is_the_high_temperature_limit():
    assert list(uniform_weights(4)) == [0.25] * 4
    assert list(uniform_weights(1)) == [1.0]
    assert np.max(np.abs(uniform_weights(5) - tree_weights(5, 1e6))) < 1e-6
    for i in range(1, 65):
        assert np.max(np.abs(uniform_weights(i) - tree_weights(i, 1e6))) < 1e-6


@pytest.mark.parametrize("call", [lambda: tree_weights(0, 1.0), lambda: tree_weights(3, 0.0),
                                  lambda: tree_weights(3, -1.0), lambda: uniform_weights(0)])
def test_weight_domain_errors(call):
    with pytest.raises(DomainError):
        call()


def test_weighting_parse():
    assert Weighting.parse("uniform") == Weighting("uniform")
    assert Weighting.parse("tree:0.5") == Weighting("tree", 0.5)
    assert Weighting.parse("tree") == Weighting("tree", 1.0)
    with pytest.raises(DomainError):
        Weighting.parse("median")


# -- slot distributions ----------------------------------------------------------

@pytest.fixture(scope="module")
def vocab():
    q = ir.SourceQuery("fly to rome now".split())
    tree = ir.IntentNode("F", [0, ir.SlotNode("city", [1, 2]), 3])
    return build_vocab([Example(q, ir.linearize(tree, q))])


def test_distribution_no_candidates(vocab):
    assert build_slot_distribution(SlotCandidates(0, ()), Weighting(), vocab) == {vocab.no_insert_id: 1.0}


def test_distribution_tree_weights(vocab):
    c = SlotCandidates(0, (ir.ptr(1), ir.slot("city"), ir.ptr(2)))
    d = build_slot_distribution(c, Weighting("tree", 1.0), vocab)
    assert d.keys() == {vocab.joint_id(ir.ptr(1)), vocab.joint_id(ir.slot("city")), vocab.joint_id(ir.ptr(2))}
    assert d[vocab.joint_id(ir.slot("city"))] == pytest.approx(0.57612, abs=1e-5)
    assert d[vocab.joint_id(ir.ptr(1))] == pytest.approx(0.21194, abs=1e-5)
    assert d[vocab.joint_id(ir.ptr(2))] == pytest.approx(0.21194, abs=1e-5)


def test_distribution_duplicates_accumulate(vocab):
    d = build_slot_distribution(SlotCandidates(0, (ir.CLOSE, ir.CLOSE)), Weighting("uniform"), vocab)
    assert d == {vocab.tag_id(ir.CLOSE): pytest.approx(1.0)}


# -- subsequence sampling -----------------------------------------------------------

def test_sample_empty_and_full():
    target = ir.parse_rendering("[IN:I @0 [SL:S @1 ] ]")
    rng = np.random.default_rng(0)
    hyp, cands = sample_subsequence(target, rng, k=0)
    assert hyp.tokens == (ir.BOS, ir.EOS)
    assert len(cands) == 1 and cands[0].tokens == target[1:-1]
    hyp, cands = sample_subsequence(target, rng, k=len(target) - 2)
    assert hyp.tokens == target
    assert len(cands) == len(target) - 1 and all(c.i == 0 for c in cands)


def test_sampler_uniform_over_lengths_and_subsets():
    n, draws = 6, 10_000
    target = body_target(n)
    rng = np.random.default_rng(1234)
    by_k = {k: [] for k in range(n + 1)}
    for _ in range(draws):
        hyp, _ = sample_subsequence(target, rng)
        by_k[len(hyp.tokens) - 2].append(hyp.positions[1:-1])
    counts = [len(by_k[k]) for k in range(n + 1)]
    assert stats.chisquare(counts).pvalue > 0.01
    for k in range(1, n):
        subsets = list(itertools.combinations(range(1, n + 1), k))
        observed = [by_k[k].count(s) for s in subsets]
        assert sum(observed) == counts[k]
        assert stats.chisquare(observed).pvalue > 0.01, k


def test_sampler_keeps_forced_positions():
    target = ir.parse_rendering("[IN:I @0 [SL:S @1 @2 ] @3 ]")
    pointer_pos = [p for p, t in enumerate(target) if t.kind is ir.Kind.POINTER]
    rng = np.random.default_rng(5)
    lengths = set()
    for _ in range(300):
        hyp, cands = sample_subsequence(target, rng, keep=pointer_pos)
        assert set(pointer_pos) <= set(hyp.positions)
        assert interleave(hyp, cands) == target
        lengths.add(len(hyp.tokens))
    assert lengths == {6, 7, 8, 9, 10}


def _all_targets_up_to(n_max, count=400):
    rng = random.Random(7)
    seen = set()
    for _ in range(count * 5):
        m = rng.randint(1, 6)
        seq = ir.linearize(random_tree(rng, m, depth=2), ["w"] * m)
        if len(seq) - 2 <= n_max:
            seen.add(seq)
        if len(seen) >= count:
            break
    return sorted(seen, key=ir.render)


def test_reconstruction_exhaustive_small_targets():
    targets = _all_targets_up_to(8)
    assert {len(t) - 2 for t in targets} >= set(range(3, 9))
    for target in targets:
        n = len(target) - 2
        for k in range(n + 1):
            for body in itertools.combinations(range(1, n + 1), k):
                pos = (0, *body, n + 1)
                hyp = hypothesis_from_positions(target, pos)
                cands = candidates_from_positions(target, pos)
                assert len(cands) == len(hyp.tokens) - 1
                assert interleave(hyp, cands) == target


# -- schedule -------------------------------------------------------------------

def test_schedule_five_tokens():
    target = body_target(5)  # stands in for [A, B, C, D, E]
    steps = oracle_schedule(target)
    assert len(steps) == 3
    assert steps[0] == [3]                # C first
    assert steps == [[3], [1, 4], [2, 5]]  # left medians for the even runs
    states = schedule_states(target)
    assert [tuple(target[p] for p in s)[1:-1] for s in states][-1] == target[1:-1]


def test_schedule_step_counts():
    assert len(oracle_schedule(body_target(1))) == 1
    assert len(oracle_schedule(body_target(17))) == 5 == math.ceil(math.log2(18))
    assert oracle_schedule(body_target(0)) == []
    for n in range(0, 1025):
        steps = oracle_schedule(body_target(n))
        assert len(steps) == steps_lower_bound(n)
        assert sorted(p for s in steps for p in s) == list(range(1, n + 1))


def test_schedule_doubles_per_step():
    steps = oracle_schedule(body_target(31))
    assert [len(s) for s in steps] == [1, 2, 4, 8, 16]


def test_steps_lower_bound():
    assert steps_lower_bound(5) == 3
    assert steps_lower_bound(1) == 1
    assert steps_lower_bound(0) == 0
    for n in range(1, 5000):
        assert steps_lower_bound(n) == math.ceil(math.log2(n + 1))
    with pytest.raises(DomainError):
        steps_lower_bound(-1)

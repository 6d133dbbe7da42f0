"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -v -s tests/test_acceptance.py``.  Models are trained from
scratch on the CPU; expect a long run.
"""

import itertools
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy import stats

from conftest import ACCEPTANCE_LINES
from test_parse_ir import random_tree

from insertion_parser import parse_ir as ir
from insertion_parser.checkpoint import load_model
from insertion_parser.corpus import (
    Example, build_vocab, default_grammar, derive_language, generate_synthetic, load_bio, load_top_tsv,
)
from insertion_parser.decoding import DecodeConfig, ModelScorer, OracleScorer, decode_batch, evaluate
from insertion_parser.model import ModelConfig, pad_batch
from insertion_parser.oracle import (
    candidates_from_positions, hypothesis_from_positions, interleave, sample_subsequence, steps_lower_bound,
    tree_weights, uniform_weights,
)
from insertion_parser.training import TrainConfig, build_model, fit, gradcheck_model

FIXTURES = Path(__file__).parent / "fixtures"

MODEL = dict(d_enc=64, d_dec=64, enc_layers=2, dec_layers=2, heads=4, dropout=0.0)
MAIN_TRAIN = dict(batch_size=64, max_steps=6000, warmup_steps=500, lr_factor=1.0, log_every=1000)
ABLATION_TRAIN = dict(batch_size=64, max_steps=2500, warmup_steps=500, lr_factor=1.0, log_every=100000)
PENALTY = 1.0
PENALTY_GRID = (0.0, 0.5, 1.0, 2.0, 4.0)
SEEDS = (0, 1, 2)


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    return ok


@pytest.fixture(scope="module")
def data():
    grammar = default_grammar()
    train = generate_synthetic(grammar, 5000, 7)
    test = generate_synthetic(grammar, 500, 8)
    return grammar, train, test, build_vocab(train)


@pytest.fixture(scope="module")
def main_model(data):
    _, train, _, vocab = data
    model = build_model(vocab, ModelConfig(**MODEL, seed=0))
    t0 = time.time()
    ckpt = fit(model, train, vocab, TrainConfig(**MAIN_TRAIN, seed=0))
    return model, ckpt, time.time() - t0


def train_model(vocab, train, seed, model_kw=(), train_kw=()):
    model = build_model(vocab, ModelConfig(**{**MODEL, **dict(model_kw), "seed": seed}))
    fit(model, train, vocab, TrainConfig(**{**ABLATION_TRAIN, **dict(train_kw), "seed": seed}))
    return model


# 1 ---------------------------------------------------------------------------------------

def test_criterion_1_exact_match(data, main_model):
    _, _, test, vocab = data
    model, _, seconds = main_model
    r = evaluate(ModelScorer(model, vocab), test, DecodeConfig(penalty=PENALTY))
    ok = r["em"] >= 0.90 and r["ic"] >= 0.98 and MAIN_TRAIN["max_steps"] <= 30000 and seconds <= 3 * 3600
    assert report(1, ok, f"EM={r['em']:.3f} (>=0.90) IC={r['ic']:.3f} (>=0.98) "
                         f"steps={MAIN_TRAIN['max_steps']} train_time={seconds / 60:.1f}min")


# 2 ---------------------------------------------------------------------------------------

def test_criterion_2_step_law(data, main_model):
    _, train, test, vocab = data
    corpus = list(train) + list(test)
    oracle = decode_batch(OracleScorer(vocab, corpus), [ex.query.tokens for ex in corpus])
    law = all(pred == ex.target and st.steps_used == steps_lower_bound(ex.n)
              for ex, (pred, st) in zip(corpus, oracle))
    # long targets up to n = 1024
    long = [Example(ir.SourceQuery(["w"] * m), ir.linearize(ir.IntentNode("I", list(range(m))), ["w"] * m))
            for m in (1, 2, 3, 14, 30, 31, 62, 126, 254, 510, 1022)]
    long_vocab = build_vocab(long)
    for ex in long:
        (pred, st), = decode_batch(OracleScorer(long_vocab, [ex]), [ex.query.tokens], DecodeConfig(max_len=1100))
        law &= pred == ex.target and st.steps_used == math.ceil(math.log2(ex.n + 1))

    model = main_model[0]
    scratch = evaluate(ModelScorer(model, vocab), test, DecodeConfig(penalty=PENALTY))
    src = evaluate(ModelScorer(model, vocab), test, DecodeConfig(mode="input_src", penalty=PENALTY))
    ratio_s = scratch["avg_steps"] / scratch["avg_target_len"]
    ratio_i = src["avg_steps"] / src["avg_target_len"]
    ok = law and ratio_s <= 0.45 and ratio_i <= 0.30
    assert report(2, ok, f"oracle law exact on {len(corpus) + len(long)} targets={law}; "
                         f"scratch {scratch['avg_steps']:.2f}/{scratch['avg_target_len']:.2f}={ratio_s:.3f} (<=0.45); "
                         f"input-src {src['avg_steps']:.2f}/{src['avg_target_len']:.2f}={ratio_i:.3f} (<=0.30); "
                         f"tokens/step {np.round(scratch['tokens_per_step'][:6], 2).tolist()}")


# 3 ---------------------------------------------------------------------------------------

def test_criterion_3_gradcheck():
    t0 = time.time()
    errors = [gradcheck_model(seed=s, d=8) for s in range(10)]
    seconds = time.time() - t0
    ok = max(errors) < 1e-4 and seconds < 60
    assert report(3, ok, f"max rel error {max(errors):.2e} over 10 seeds (<1e-4), {seconds:.1f}s (<60s)")


# 4 ---------------------------------------------------------------------------------------

def test_criterion_4_oracle_math():
    t0 = time.time()
    ok = True
    for tau in (0.1, 0.5, 1.0, 1.5, 2.0):
        for i in range(1, 65):
            w = tree_weights(i, tau)
            ok &= abs(w.sum() - 1) < 1e-9 and np.allclose(w, w[::-1], rtol=0, atol=1e-15)
            ok &= int(np.argmax(w)) == (i - 1) // 2
    limit = max(np.max(np.abs(uniform_weights(i) - tree_weights(i, 1e7))) for i in range(1, 65))
    ok &= limit < 1e-6

    n, draws = 6, 10_000
    target = (ir.BOS, *(ir.ptr(i) for i in range(n)), ir.EOS)
    rng = np.random.default_rng(2024)
    by_k = {k: [] for k in range(n + 1)}
    for _ in range(draws):
        hyp, _ = sample_subsequence(target, rng)
        by_k[hyp.T - 2].append(hyp.positions[1:-1])
    p_len = stats.chisquare([len(v) for v in by_k.values()]).pvalue
    p_sub = min(stats.chisquare([by_k[k].count(s) for s in itertools.combinations(range(1, n + 1), k)]).pvalue
                for k in range(1, n))
    ok &= p_len > 0.01 and p_sub > 0.01

    rng_t = random.Random(11)
    targets = set()
    while len(targets) < 300:
        m = rng_t.randint(1, 6)
        seq = ir.linearize(random_tree(rng_t, m, depth=2), ["w"] * m)
        if len(seq) - 2 <= 8:
            targets.add(seq)
    checked = 0
    for t in targets:
        n_t = len(t) - 2
        for k in range(n_t + 1):
            for body in itertools.combinations(range(1, n_t + 1), k):
                pos = (0, *body, n_t + 1)
                ok &= interleave(hypothesis_from_positions(t, pos), candidates_from_positions(t, pos)) == t
                checked += 1
    seconds = time.time() - t0
    ok &= seconds < 60
    assert report(4, ok, f"weights ok, uniform limit err {limit:.1e}, chi2 p(len)={p_len:.3f} p(subset)>={p_sub:.3f}, "
                         f"{checked} reconstructions, {seconds:.1f}s")


# 5 ---------------------------------------------------------------------------------------

def test_criterion_5_weighting_ablation(data):
    _, train, test, vocab = data
    em = {}
    for tau in (1.0, 0.1):
        em[tau] = [evaluate(ModelScorer(train_model(vocab, train, s, train_kw={"weighting": f"tree:{tau}"}), vocab),
                            test, DecodeConfig(penalty=PENALTY))["em"] for s in SEEDS]
    a, b = np.mean(em[1.0]), np.mean(em[0.1])
    assert report(5, a >= b, f"mean scratch EM tau=1.0 {a:.3f} {np.round(em[1.0], 3).tolist()} >= "
                             f"tau=0.1 {b:.3f} {np.round(em[0.1], 3).tolist()} (paper 86.74 vs 74.84)")


# 6 ---------------------------------------------------------------------------------------

def test_criterion_6_copy_transfer(data):
    grammar, train, _, vocab = data
    grammar_b, b_to_a = derive_language(grammar, word_order="reverse_spans", seed=1)
    test_b = generate_synthetic(grammar_b, 500, 8)
    em = {key: [] for key in ("copy_src", "nocopy_src", "copy_scratch")}
    for s in SEEDS:
        for copy in (True, False):
            scorer = ModelScorer(train_model(vocab, train, s, model_kw={"copy_enabled": copy}), vocab,
                                 translate=b_to_a)
            src = evaluate(scorer, test_b, DecodeConfig(mode="input_src", penalty=PENALTY))["em"]
            if copy:
                em["copy_src"].append(src)
                em["copy_scratch"].append(evaluate(scorer, test_b, DecodeConfig(penalty=PENALTY))["em"])
            else:
                em["nocopy_src"].append(src)
    mean = {k: float(np.mean(v)) for k, v in em.items()}
    ok = mean["copy_src"] >= mean["nocopy_src"] and mean["copy_src"] >= mean["copy_scratch"]
    assert report(6, ok, f"language B EM: copy+input-src {mean['copy_src']:.3f} >= no-copy {mean['nocopy_src']:.3f}; "
                         f">= scratch {mean['copy_scratch']:.3f} (paper 50.07 > 47.00 > 42.03) "
                         f"per seed {({k: np.round(v, 3).tolist() for k, v in em.items()})}")


# 7 ---------------------------------------------------------------------------------------

def test_criterion_7_penalty_monotone(data, main_model):
    _, _, test, vocab = data
    scorer = ModelScorer(main_model[0], vocab)
    lengths = {}
    for mode in ("scratch", "input_src"):
        lengths[mode] = [evaluate(scorer, test, DecodeConfig(mode=mode, penalty=p))["avg_pred_len"]
                         for p in PENALTY_GRID]
    ok = all(all(b >= a for a, b in zip(v, v[1:])) for v in lengths.values())
    assert report(7, ok, f"avg decoded length over penalties {list(PENALTY_GRID)}: "
                         f"{({k: np.round(v, 3).tolist() for k, v in lengths.items()})}")


# 8 ---------------------------------------------------------------------------------------

def test_criterion_8_round_trips(data, main_model, tmp_path):
    _, _, test, vocab = data
    rng = random.Random(0)
    trees_ok = True
    for _ in range(1000):
        m = rng.randint(1, 14)
        tree = random_tree(rng, m)
        seq = ir.linearize(tree, ["w"] * m)
        trees_ok &= ir.delinearize(seq, ["w"] * m) == tree and ir.parse_rendering(ir.render(seq)) == seq

    top_ok = load_top_tsv(FIXTURES / "top_ok.tsv")
    top_mixed = load_top_tsv(FIXTURES / "top_mixed.tsv")
    bio = load_bio(FIXTURES / "atis_bio.txt")
    loaders_ok = ((len(top_ok), top_ok.skip_count) == (2, 0) and (len(top_mixed), top_mixed.skip_count) == (2, 2)
                  and (len(bio), bio.skip_count, bio.repairs) == (3, 0, 1))

    model, ckpt, _ = main_model
    path = tmp_path / "main.ckpt"
    ckpt.save(path)
    loaded, _ = load_model(path)
    src = [vocab.source_ids(ex.query.tokens) for ex in test[:32]]
    hyp = [[vocab.joint_id(t) for t in ex.target] for ex in test[:32]]
    batch = pad_batch(src, hyp, vocab.pad_id)
    with torch.no_grad():
        ckpt_ok = torch.equal(model(*batch), loaded(*batch))
    cfg = DecodeConfig(penalty=PENALTY)
    ckpt_ok &= evaluate(ModelScorer(model, vocab), test, cfg) == evaluate(ModelScorer(loaded, vocab), test, cfg)
    ok = trees_ok and loaders_ok and ckpt_ok
    assert report(8, ok, f"1000-tree round trip={trees_ok}; loaders (TSV 2+0, mixed 2+2 skipped, BIO 3 with 1 repair)"
                         f"={loaders_ok}; checkpoint bitwise={ckpt_ok}")

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechmeta import zoo as zm
from mechmeta.errors import BinUnfillable
from mechmeta.zoo import Alt, Cat, Lit, PatternGrammar, Rep, SamplingPrior, Star, Zoo


@pytest.fixture(scope="module")
def big_zoo():
    return zm.build_zoo(5000, rng=0)


def test_mdl_cost_table():
    assert math.isclose(zm.mdl_score(PatternGrammar(Lit(0), 3)), math.log2(5) + math.log2(3))
    assert math.isclose(zm.mdl_score(PatternGrammar(Lit(0), 3)), 3.9069, abs_tol=1e-4)
    cat = PatternGrammar(Cat(Lit(0), Lit(0)), 3)
    assert math.isclose(cat.mdl_bits, 10.1357, abs_tol=1e-4)
    rep = PatternGrammar(Rep(Lit(1), 3), 2)
    assert math.isclose(rep.mdl_bits, 2 * math.log2(5) + 1 + 2 * math.log2(4))
    star = PatternGrammar(Star(Alt(Lit(0), Lit(1))), 2)
    assert math.isclose(star.mdl_bits, 4 * math.log2(5) + 2)
    assert cat.mdl_bits == cat.mdl_bits


def test_sexpr_roundtrip():
    g = PatternGrammar(Cat(Star(Lit(1)), Alt(Rep(Lit(0), 4), Lit(2))), 3)
    text = g.to_sexpr()
    assert text == "(cat (star (lit 1)) (alt (rep 4 (lit 0)) (lit 2)))"
    assert zm.parse_sexpr(text) == g.rules
    with pytest.raises(ValueError):
        zm.parse_sexpr("(bogus 1)")


def test_zoo_histogram_is_uniform(big_zoo):
    assert len(big_zoo) == 5000
    mdls = big_zoo.mdls
    assert mdls.min() >= 0 and mdls.max() <= 100
    counts, _ = np.histogram(mdls, bins=np.linspace(0, 100, 11))
    assert all(450 <= c <= 550 for c in counts)


def test_small_zoo_and_determinism():
    a = zm.build_zoo(10, rng=3)
    counts, _ = np.histogram(a.mdls, bins=np.linspace(0, 100, 11))
    assert list(counts) == [1] * 10
    b = zm.build_zoo(10, rng=3)
    assert a == b
    assert zm.build_zoo(10, rng=4) != a


def test_bin_unfillable():
    with pytest.raises(BinUnfillable):
        zm.build_zoo(10, mdl_lo=0, mdl_hi=1, rng=0, max_attempts=200)


def test_zoo_json_roundtrip(tmp_path):
    z = zm.build_zoo(30, rng=1)
    path = tmp_path / "zoo.json"
    z.save(path)
    assert Zoo.load(path) == z
    assert Zoo.load(path).seed == 1


def test_prior_softmax_toy():
    toy = Zoo(tuple(PatternGrammar(Lit(0), 1) for _ in range(3)))
    mdls = np.array([1.0, 2.0, 3.0])
    w = zm.prior_weights(mdls, -1.0)
    expect = np.exp(-mdls) / np.exp(-mdls).sum()
    np.testing.assert_allclose(w, expect, rtol=1e-12)
    assert np.all(np.isfinite(zm.prior_weights(np.array([0.0, 100.0]), 1e-3)))


def test_expected_mdl_monotone_in_inverse_temperature(big_zoo):
    # d E[mdl] / d(1/T) = Var[mdl] > 0, so the ordering follows 1/T, not T
    temps = (-1, -5, -1e9, 5, 1)  # increasing 1/T
    values = [zm.expected_mdl(big_zoo.mdls, t) for t in temps]
    assert values == sorted(values)
    mean = big_zoo.mdls.mean()
    assert zm.expected_mdl(big_zoo.mdls, -5) < mean < zm.expected_mdl(big_zoo.mdls, 5)


def test_sample_grammar_biases(big_zoo):
    rng = np.random.default_rng(0)
    mean = big_zoo.mdls.mean()
    simple = np.mean([zm.sample_grammar(big_zoo, SamplingPrior(-5), rng).mdl_bits for _ in range(2000)])
    complex_ = np.mean([zm.sample_grammar(big_zoo, SamplingPrior(5), rng).mdl_bits for _ in range(2000)])
    assert simple < mean < complex_


def test_uniform_limit(big_zoo):
    w = zm.prior_weights(big_zoo.mdls, 1e9)
    np.testing.assert_allclose(w, 1 / 5000, rtol=1e-6)
    w = zm.prior_weights(big_zoo.mdls, -1e9)
    np.testing.assert_allclose(w, 1 / 5000, rtol=1e-6)


def test_prior_rejects_zero_temperature():
    with pytest.raises(ValueError):
        SamplingPrior(0.0)


def test_deterministic_strings():
    rng = np.random.default_rng(0)
    assert zm.sample_string(PatternGrammar(Lit(0), 2), rng) == (3,)
    assert zm.sample_string(PatternGrammar(Cat(Lit(0), Lit(1)), 2), rng) == (3, 4)


def test_truncation_keeps_membership():
    g = PatternGrammar(Star(Rep(Star(Lit(0)), 8)), 1)
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = zm.sample_string(g, rng)
        assert zm.recognizes(g, s)
        assert len(s) < 200


def test_zoo_strings_recognized(big_zoo):
    rng = np.random.default_rng(2)
    for i in range(0, 5000, 25):
        g = big_zoo[i]
        s = zm.sample_string(g, rng)
        assert len(s) >= 1
        assert zm.recognizes(g, s), (g.to_sexpr(), s)


@settings(max_examples=60, deadline=None)
@given(nodes=st.integers(1, 25), alphabet=st.integers(1, 7), seed=st.integers(0, 10**6))
def test_random_tree_properties(nodes, alphabet, seed):
    rng = np.random.default_rng(seed)
    tree = zm.random_tree(nodes, alphabet, rng)
    g = PatternGrammar(tree, alphabet)
    assert zm.size(tree) == nodes
    assert zm.parse_sexpr(g.to_sexpr()) == tree
    s = zm.sample_string(g, rng)
    assert len(s) >= 1 and zm.recognizes(g, s)
    assert not zm.recognizes(g, ())


def test_zoo_stats():
    z = zm.build_zoo(20, rng=0)
    stats = zm.zoo_stats(z)
    assert stats["n"] == 20 and sum(b["count"] for b in stats["histogram"]) == 20

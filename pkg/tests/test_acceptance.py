"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is repeated in the pytest terminal
summary.  Tolerances are pinned here and never relaxed to make a line pass.
"""

import csv

import numpy as np
import pytest
from scipy import stats

from mechmeta import checkpoint, evaluation, langs, meta, runner
from mechmeta.errors import DeadPrefix
from mechmeta.langs import STOP, VOCAB_SIZE, get_language
from mechmeta.nn import ArchDescriptor
from mechmeta.zoo import Lit, PatternGrammar, SamplingPrior, Zoo, build_zoo, expected_mdl, prior_weights
from mechmeta.zoo import sample_grammar_index

from . import oracles
from .test_nn import finite_difference_check

# ---------------------------------------------------------------------------
# 1. exact continuation table for one dyck string


def test_c1_table_two(criterion):
    dyck = get_language("dyck")
    recs = evaluation.records_for_string(dyck, dyck.encode("(){()}"))
    got = [(dyck.decode(r.prefix), r.length, ",".join(_names(dyck, r.valid))) for r in recs]
    want = [
        ("(", 1, "(,),{"),
        ("()", 1, "(,STOP,{"),
        ("(){", 2, "(,{,}"),
        ("(){(", 3, "(,),{"),
        ("(){()", 3, "(,{,}"),
        ("(){()}", 3, "(,STOP,{"),
    ]
    ok = got == want
    criterion("C1 table-2 rows", ok, f"{len(got)} rows" + ("" if ok else f" got {got}"))
    assert ok


def _names(lang, ids):
    return sorted("STOP" if x == STOP else lang.decode([x]) for x in ids)


# ---------------------------------------------------------------------------
# 2. membership and continuations agree with brute force, token length <= 8

MAX_TOKENS = 8


def _check_language(name):
    lang = get_language(name)
    alphabet = oracles.ALPHABETS[name]
    base = oracles.Viability(name, MAX_TOKENS + 1)
    memo = {"": True}

    def viable(q):
        # viability is prefix-closed, so a dead parent settles the child
        if q not in memo:
            memo[q] = viable(q[:-1]) and base(q)
        return memo[q]

    checked = mismatches = 0
    for q in oracles.all_strings(alphabet, MAX_TOKENS, 0):
        checked += 1
        if q and langs.membership(lang, q) != oracles.is_member(name, q):
            mismatches += 1
        want = oracles.continuation_oracle(name, q, viable, alphabet)
        try:
            got = set(_names(lang, langs.valid_continuations(lang, q)))
        except DeadPrefix:
            got = None
        if got != want:
            mismatches += 1
    return checked, mismatches


def test_c2_oracle_equivalence(criterion):
    total = bad = 0
    per = {}
    for name in langs.LANG_NAMES:
        checked, mismatches = _check_language(name)
        total += checked
        bad += mismatches
        per[name] = mismatches
    ok = bad == 0
    criterion("C2 oracle equivalence", ok, f"{total} strings, {bad} mismatches {per if bad else ''}".strip())
    assert ok


# ---------------------------------------------------------------------------
# 3. uniform sampling, chi-square p > 0.001 at 80 000 draws

DRAWS = 80_000
ALPHA = 1e-3


def test_c3_uniform_sampling(criterion):
    rng = np.random.default_rng(2024)
    cases = [("dyck", 2, 8), ("cross_dyck", 2, 10), ("kleene", 3, 27)]
    results = []
    for name, length, words in cases:
        lang = get_language(name)
        brute = [s for s in oracles.all_strings(oracles.ALPHABETS[name], 2 * length, 1)
                 if oracles.is_member(name, s) and langs.prefix_length(lang, s) == length]
        assert len(brute) == words == langs.count_strings(lang, length)
        index = {lang.encode(s): i for i, s in enumerate(brute)}
        counts = np.zeros(words, dtype=np.int64)
        for _ in range(DRAWS):
            counts[index[langs.sample_uniform(lang, length, rng).symbols]] += 1
        p = stats.chisquare(counts).pvalue
        results.append((name, length, p))
    ok = all(p > ALPHA for *_, p in results)
    detail = ", ".join(f"{n}/{l} p={p:.3g}" for n, l, p in results)
    criterion("C3 uniform sampling", ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# 4. BPTT vs central differences


def test_c4_gradients(criterion):
    worst = 0.0
    for cell in ("lstm", "gru"):
        for layers in (1, 2):
            for seed in range(5):
                arch = ArchDescriptor(cell=cell, layers=layers, hidden_dim=8)
                worst = max(worst, finite_difference_check(arch, seed, coords=20))
    ok = worst < 1e-4
    criterion("C4 gradient check", ok, f"max rel err {worst:.2e} (20 coords x 5 seeds x 4 archs)")
    assert ok


# ---------------------------------------------------------------------------
# 5. metric formulas on hand-worked distributions


def _d(**mass):
    d = np.zeros(VOCAB_SIZE)
    for k, v in mass.items():
        d[int(k[1:])] = v
    return d


# (distribution, valid ids, p_val, bt, f1) worked out by hand
METRIC_TABLE = [
    (_d(t3=1.0), {3, 4}, 1.0, 0.5, 2 / 3),  # degenerate: perfect precision, half recall
    (_d(t3=0.5, t4=0.5), {3, 4}, 1.0, 1.0, 1.0),
    (_d(t3=0.5, t5=0.5), {3, 4}, 0.5, 0.0, 0.0),  # tie is not "better than"
    (_d(t5=1.0), {3}, 0.0, 0.0, 0.0),
    (_d(t3=0.6, t5=0.4), {3}, 0.6, 1.0, 0.75),
    (_d(t3=0.3, t4=0.3, t5=0.4), {3, 4}, 0.6, 0.0, 0.0),
    (_d(t1=0.7, t3=0.2, t9=0.1), {1, 3}, 0.9, 1.0, 2 * 0.9 / 1.9),
    (_d(t1=0.7, t3=0.05, t9=0.25), {1, 3}, 0.75, 0.5, 2 * 0.75 * 0.5 / 1.25),
    (np.full(VOCAB_SIZE, 0.1), {3, 4, 5}, 0.3, 0.0, 0.0),
    (np.full(VOCAB_SIZE, 0.1), set(range(VOCAB_SIZE)), 1.0, 1.0, 1.0),
    (_d(t3=0.25, t4=0.25, t5=0.25, t6=0.25), {3, 4, 5}, 0.75, 0.0, 0.0),  # ties again
    (_d(t3=0.3, t4=0.3, t5=0.3, t6=0.1), {3, 4, 5}, 0.9, 1.0, 2 * 0.9 / 1.9),
    (_d(t3=0.45, t4=0.05, t6=0.5), {3, 4}, 0.5, 0.0, 0.0),
    (_d(t1=0.8, t2=0.2), {1}, 0.8, 1.0, 2 * 0.8 / 1.8),
    (_d(t4=1.0), {3, 4, 5}, 1.0, 1 / 3, 0.5),  # degenerate with three valid tokens
    (_d(t3=0.5, t4=0.2, t7=0.3), {3, 4}, 0.7, 0.5, 0.7 / 1.2),
]


def test_c5_metric_table(criterion):
    worst = 0.0
    degenerate_seen = False
    for dist, valid, p, b, f in METRIC_TABLE:
        m = evaluation.score(dist, valid)
        worst = max(worst, abs(m.p_val - p), abs(m.bt - b), abs(m.f1 - f))
        degenerate_seen |= m.p_val == 1.0 and m.bt < 1.0
    ok = worst <= 1e-12 and degenerate_seen and len(METRIC_TABLE) >= 10
    criterion("C5 metric formulas", ok, f"{len(METRIC_TABLE)} cases, max abs err {worst:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 6. zoo prior: expected MDL ordering and sampling frequencies

TEMPS = (-5, -1, 1, 5)


def test_c6a_expected_mdl_monotone_in_t(criterion):
    zoo = build_zoo(5000, rng=0)
    values = [expected_mdl(zoo.mdls, t) for t in TEMPS]
    ok = all(a < b for a, b in zip(values, values[1:]))
    detail = " ".join(f"E[T={t}]={v:.3f}" for t, v in zip(TEMPS, values))
    criterion("C6a E[mdl] increasing in T", ok, detail)
    assert ok


def test_c6b_toy_zoo_frequencies(criterion):
    toy = Zoo(tuple(PatternGrammar(Lit(0), a) for a in (1, 2, 4)))
    draws = 100_000
    worst = 0.0
    for t in TEMPS:
        w = prior_weights(toy.mdls, t)
        rng = np.random.default_rng(abs(t) * 10 + (t > 0))
        counts = np.bincount([sample_grammar_index(toy, SamplingPrior(t), rng) for _ in range(draws)], minlength=3)
        se = np.sqrt(w * (1 - w) / draws)
        worst = max(worst, float(np.max(np.abs(counts / draws - w) / se)))
    ok = worst <= 3.0
    criterion("C6b toy zoo frequencies", ok, f"max |freq - w| = {worst:.2f} SE at {draws} draws")
    assert ok


# ---------------------------------------------------------------------------
# 7. desk-scale trend: LSTM benefits from meta-training, GRU less so

TREND_CONFIG = dict(
    targets=["anbn"],
    meta_sources=["none", "anbncn"],
    archs=[{"cell": "lstm"}, {"cell": "gru"}],
    n_strings=[10],
    seeds=[0, 1, 2],
    hidden_dim=64,
    tasks=2000,
    eval={"lengths": [1, 10], "per_length": 10, "max_length": 10},
)


def _trend_f1(rows):
    out = {}
    for r in rows:
        if r["length_bucket"] == "<=10":
            out[(r["arch"], r["meta_source"], r["seed"])] = r["mean_f1"]
    return out


@pytest.fixture(scope="module")
def trend_grid(request):
    out = request.config.cache.mkdir("trend-grid")
    runner.run_grid(runner.ExperimentConfig(**TREND_CONFIG), out)
    return out


@pytest.mark.slow
def test_c7_trend(criterion, trend_grid):
    f1 = _trend_f1(runner.read_results(trend_grid / "results.csv"))
    seeds = TREND_CONFIG["seeds"]
    gain = {arch: [f1[(arch, "anbncn", s)] - f1[(arch, "none", s)] for s in seeds] for arch in ("lstm", "gru")}
    lstm_wins = sum(g > 0 for g in gain["lstm"])
    lstm_pooled = float(np.mean(gain["lstm"]))
    gru_pooled = float(np.mean(gain["gru"]))
    ok_a = lstm_wins >= 2 and lstm_pooled > 0.05
    ok_b = gru_pooled < lstm_pooled
    criterion("C7a LSTM meta gain", ok_a, f"wins {lstm_wins}/3, pooled gain {lstm_pooled:+.4f} (need > 0.05)")
    criterion("C7b GRU gain < LSTM gain", ok_b, f"gru {gru_pooled:+.4f} vs lstm {lstm_pooled:+.4f}")
    assert ok_a and ok_b


@pytest.mark.slow
def test_trend_meta_query_loss_falls(trend_grid):
    # 100 tasks = 50 outer steps at accumulation 2
    logs = sorted((trend_grid / "checkpoints").glob("*.log.csv"))
    assert len(logs) == 6
    for path in logs:
        with open(path) as fh:
            losses = [float(r["mean_query_loss"]) for r in csv.DictReader(fh)]
        assert np.median(losses[-50:]) < np.median(losses[:50]), path.name


# ---------------------------------------------------------------------------
# 8. determinism of every stage


def _stage_bytes(tmp):
    tmp.mkdir()
    dyck = get_language("cross_dyck")
    evaluation.write_corpus(tmp / "corpus.jsonl", evaluation.build_eval_corpus(dyck, np.random.default_rng(9), (1, 6), 3))
    build_zoo(40, rng=5).save(tmp / "zoo.json")
    cfg = meta.desk_config(arch=ArchDescriptor(hidden_dim=8), inner_loops_total=6, support_size=20)
    res = meta.meta_train(cfg, get_language("anbncn"))
    checkpoint.save(tmp / "meta.mlfw", res.params, {"meta": cfg.to_dict()})
    res.write_log(tmp / "meta.log.csv")
    grid_cfg = runner.ExperimentConfig(
        targets=["dyck"],
        meta_sources=["none", "anbn", "zoo:-5"],
        archs=[{"cell": "gru", "layers": 1}],
        n_strings=[10],
        seeds=[0],
        hidden_dim=6,
        tasks=3,
        meta={"support_size": 20},
        zoo={"n": 30, "seed": 1},
        eval={"lengths": [1, 4], "per_length": 2, "max_length": 4},
    )
    runner.run_grid(grid_cfg, tmp / "grid")
    return {p.relative_to(tmp).as_posix(): p.read_bytes() for p in sorted(tmp.rglob("*")) if p.is_file()}


def test_c8_determinism(criterion, tmp_path):
    a = _stage_bytes(tmp_path / "a")
    b = _stage_bytes(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = set(a) == set(b) and not differing
    criterion("C8 determinism", ok, f"{len(a)} artifacts compared" + (f", differing: {differing}" if differing else ""))
    assert ok

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlpaf import curation, lang, policy, verifier
from rlpaf.curation import StatementRecord
from rlpaf.lang import ProofScript, Statement, Tactic

from helpers import random_params


def test_gen_is_seeded_and_bounded():
    a = curation.gen_statements(7, 50, 3, 3)
    assert a == curation.gen_statements(7, 50, 3, 3)
    assert [r.id for r in a] == list(range(50))
    for r in a:
        assert lang.depth(r.statement.rhs) <= 3
        assert r.scramble_steps == 3


def test_zero_scramble_is_identity():
    for r in curation.gen_statements(1, 20, 3, 0):
        assert r.statement.lhs == r.statement.rhs
        assert verifier.check_proof(r.statement, ProofScript()).success


def test_gen_preconditions():
    with pytest.raises(ValueError):
        curation.gen_statements(0, 1, 5, 3)
    with pytest.raises(ValueError):
        curation.gen_statements(0, 1, 3, 6)
    with pytest.raises(ValueError):
        curation.gen_statements(0, 1, 3, 2, min_scramble=3)


def test_scramble_exhaustion(monkeypatch):
    # distrib never matches a bare variable, so every attempt fails
    monkeypatch.setattr(curation, "SCRAMBLE_MOVES", (("distrib", "fwd"),))
    with pytest.raises(curation.GenerationExhausted):
        curation.scramble(np.random.default_rng(0), lang.Var("a"), 1)


def test_record_json_roundtrip():
    r = curation.gen_statements(3, 1, 3, 2)[0]
    back = StatementRecord.from_json(json.loads(json.dumps(r.to_json())))
    assert back == r
    assert list(r.to_json()) == ["id", "lhs", "rhs", "source", "scramble_steps"]


def test_window_bounds_inclusive():
    recs = [replace(curation.gen_statements(0, 1, 2, 1)[0], id=i, pass_count=c) for i, c in enumerate([0, 1, 2, 5, 16, 17, 20])]
    kept = [r.pass_count for r in curation.in_window(recs, 2, 16)]
    assert kept == [2, 5, 16]


@given(st.lists(st.integers(0, 32), max_size=30), st.integers(0, 32), st.integers(0, 32))
def test_window_matches_brute_filter(counts, lo, hi):
    base = curation.gen_statements(0, 1, 2, 1)[0]
    recs = [replace(base, id=i, pass_count=c) for i, c in enumerate(counts)]
    expect = [r for r in recs if lo <= r.pass_count <= hi]
    assert curation.in_window(recs, lo, hi) == expect


def test_select_rl_pool_equals_filter_of_counts(small_corpus):
    params = random_params(3, 0.05)
    scored = curation.with_pass_counts(params, small_corpus[:10], 8, seed=2)
    pool = curation.select_rl_pool(small_corpus[:10], params, 8, 0, 1, seed=2)
    assert pool == [r for r in scored if 0 <= r.pass_count <= 1]
    with pytest.raises(ValueError):
        curation.select_rl_pool(small_corpus, params, 8, 5, 2)


def test_estimate_pass_nested_and_argmax():
    params = random_params(4, 0.5)
    s = curation.gen_statements(4, 1, 2, 1)[0].statement
    mat = curation.pass_matrix(params, [s], [9], 32)
    assert curation.estimate_pass(params, s, 16, seed=9) == mat[0, :16].sum()
    assert curation.estimate_pass(params, s, 16, seed=9) <= curation.estimate_pass(params, s, 32, seed=9)
    with pytest.raises(ValueError):
        curation.estimate_pass(params, s, 0)


def _deterministic_prover(s: Statement, proof: ProofScript) -> policy.PolicyParams:
    """Hand-set weights whose argmax decode is the one-tactic ``proof`` followed by EOS."""
    arch = policy.Architecture()
    theta = np.zeros(arch.n_params)
    views = policy._views(arch, theta)
    b2 = views[4]
    tok = policy.encode_script(proof, eos=False)[0]
    b2[tok] = 50.0
    w1c, w2 = views[1], views[3]
    # when the last token is ``tok``, push hidden unit 0 up and let it select EOS
    col = (arch.window - 1) * (arch.vocab + 1) + tok
    w1c[0, col] = 20.0
    w2[policy.EOS, 0] = 200.0
    return policy.PolicyParams(arch, theta)


def test_estimate_pass_argmax_prover():
    s = Statement(lang.parse_expr("(a + 0)"), lang.Var("a"))
    params = _deterministic_prover(s, ProofScript((Tactic("add_zero"),)))
    assert curation.estimate_pass(params, s, 1, temperature=0.0) == 1


def test_uniform_policy_pass_count_in_bounds(small_corpus):
    params = random_params(5, 0.05)
    for r in curation.with_pass_counts(params, small_corpus[:5], 16, seed=1):
        assert 0 <= r.pass_count <= 16
    hist = curation.pass_histogram(curation.with_pass_counts(params, small_corpus[:5], 16, seed=1), 16)
    assert hist.sum() == 5 and len(hist) == 17


def test_expert_iteration_dedup_and_skip(small_corpus):
    params = policy.init_params(seed=0)
    recs = small_corpus[:12]
    res = curation.expert_iteration(params, recs, 2, 64, 0.3, 1, seed=3)
    keys = [(p.statement_id, p.script.render()) for p in res.corpus]
    assert len(keys) == len(set(keys))
    by_id = {r.id: r for r in recs}
    for p in res.corpus:
        assert verifier.check_proof(by_id[p.statement_id].statement, p.script).success
    assert len(res.coverage) == 2
    assert res.coverage[0] <= res.coverage[1]
    # statements never solved contribute nothing
    solved = {p.statement_id for p in res.corpus}
    assert res.coverage[-1] == pytest.approx(len(solved) / len(recs))


def test_expert_iteration_zero_epochs_keeps_params(small_corpus):
    params = policy.init_params(seed=0)
    res = curation.expert_iteration(params, small_corpus[:5], 1, 16, 0.3, 0, seed=1)
    assert np.array_equal(res.params.theta, params.theta)
    with pytest.raises(ValueError):
        curation.expert_iteration(params, small_corpus[:5], 0, 16, 0.3, 1)


def test_prefix_repair_with_empty_suffix():
    """Prefix already solves the goal and the last tactic is junk: an immediate EOS repairs it."""
    s = Statement(lang.parse_expr("(a + 0)"), lang.Var("a"))
    failing = ProofScript((Tactic("add_zero"), Tactic("mul_one")))
    outcome = verifier.check_proof(s, failing)
    assert outcome.first_failure == 1
    arch = policy.Architecture()
    theta = np.zeros(arch.n_params)
    policy._views(arch, theta)[4][policy.EOS] = 30.0
    pair = curation.prefix_repair(policy.PolicyParams(arch, theta), s, failing, outcome, attempts=4, seed=0)
    assert pair is not None
    assert pair.repaired == ProofScript((Tactic("add_zero"),))
    assert verifier.check_proof(s, pair.repaired).success


def test_repair_pair_invariants():
    s = Statement(lang.parse_expr("(a + 0)"), lang.Var("a"))
    failing = ProofScript((Tactic("add_comm"), Tactic("mul_one")))
    bad = verifier.check_proof(s, failing)
    with pytest.raises(ValueError):
        curation.RepairPair(s, failing, bad, ProofScript((Tactic("add_zero"),)))
    ok = verifier.check_proof(s, ProofScript((Tactic("add_zero"),)))
    with pytest.raises(ValueError):
        curation.RepairPair(s, failing, ok, ProofScript((Tactic("add_zero"),)))


def test_prefix_repair_results_are_valid(small_corpus):
    params = random_params(6, 0.05)
    for r in small_corpus[:10]:
        seqs = policy.sample_batch(params, [r.statement] * 4, [1, 2, 3, 4], 1.0, 8)
        for seq in seqs:
            script = policy.decode(seq)
            o = verifier.check_proof(r.statement, script)
            if o.first_failure is None:
                continue
            pair = curation.prefix_repair(params, r.statement, script, o, 16, seed=r.id)
            if pair is not None:
                k = o.first_failure
                assert pair.repaired.tactics[:k] == script.tactics[:k]
                assert verifier.check_proof(r.statement, pair.repaired).success


def test_corpus_io_roundtrip_and_errors(tmp_path, small_corpus):
    path = tmp_path / "s.jsonl"
    curation.write_jsonl(path, (r.to_json() for r in small_corpus))
    assert curation.read_statements(path) == list(small_corpus)
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps(small_corpus[0].to_json()) + "\n{\"id\": 1, \"lhs\": \"(a +\", \"rhs\": \"a\"}\n")
    with pytest.raises(curation.CorpusFormatError) as info:
        curation.read_statements(bad)
    assert info.value.line == 2 and ":2:" in str(info.value)


def test_proof_and_repair_io(tmp_path):
    s = Statement(lang.parse_expr("(a + 0)"), lang.Var("a"))
    proofs = [curation.ProofRecord(0, ProofScript((Tactic("add_zero"),)))]
    curation.write_jsonl(tmp_path / "p.jsonl", (p.to_json() for p in proofs))
    assert curation.read_proofs(tmp_path / "p.jsonl") == proofs
    failing = ProofScript((Tactic("add_zero"), Tactic("mul_one")))
    pair = curation.RepairPair(s, failing, verifier.check_proof(s, failing), ProofScript((Tactic("add_zero"),)), 0)
    curation.write_jsonl(tmp_path / "r.jsonl", [pair.to_json()])
    (row,) = curation.read_repairs(tmp_path / "r.jsonl")
    assert row["repaired"] == pair.repaired and row["first_failure"] == 1
    assert list(pair.to_json()) == ["statement_id", "lhs", "rhs", "failing", "first_failure", "repaired"]

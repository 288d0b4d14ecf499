import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlpaf import lang, policy
from rlpaf.lang import ProofScript, Statement, Tactic

from helpers import random_params, seq_logprob_fd_probes, single_tactic_solutions, statements


def test_vocabulary_shape():
    assert len(policy.PATHS) == 15
    assert len(policy.PAIRS) == 16
    assert policy.VOCAB_SIZE == 241 and policy.EOS == 240
    assert len(set(policy.TACTIC_TOKENS)) == 240


@given(st.lists(st.integers(0, policy.EOS - 1), max_size=6))
def test_encode_decode_roundtrip(tokens):
    p = policy.decode(tokens)
    assert policy.encode_script(p, eos=False) == tokens
    assert policy.decode(policy.encode_script(p)) == p


def test_decode_stops_at_eos():
    assert len(policy.decode([3, policy.EOS, 5])) == 1


def test_out_of_vocab_tactic():
    deep = Tactic("add_comm", "fwd", ("L", "L", "L", "L"))
    assert not policy.in_vocab(ProofScript((deep,)))
    with pytest.raises(ValueError):
        policy.encode_tactic(deep)


def test_step_distribution_normalized():
    params = random_params(1)
    s = statements(0, 1)[0]
    for prefix in ([], [4], [1, 2, 3, 4, 5]):
        lp = policy.step_logprobs(params, s, prefix)
        assert lp.shape == (policy.VOCAB_SIZE,)
        assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-12)


def test_seq_logprob_is_sum_of_steps():
    params = random_params(2)
    s = statements(1, 1)[0]
    o = [7, 30, policy.EOS]
    total, per = policy.seq_logprob(params, s, o)
    manual = [policy.step_logprobs(params, s, o[:t])[o[t]] for t in range(len(o))]
    assert per == pytest.approx(manual, abs=1e-12)
    assert total == pytest.approx(sum(manual), abs=1e-12)


@pytest.mark.parametrize("state_aware", [True, False])
def test_gradient_matches_finite_differences(state_aware):
    assert seq_logprob_fd_probes(10, seed=3 if state_aware else 4) < 1e-4


def test_sft_zero_lr_is_identity_and_step_lowers_nll():
    params = random_params(5, 0.05)
    s = statements(2, 1)[0]
    batch = [(s, [3, 9, policy.EOS])]
    assert policy.sft_step(params, batch, 0.0) is params
    before = policy.mean_nll(params, batch)
    after = policy.mean_nll(policy.sft_step(params, batch, 0.05), batch)
    assert after < before


def test_sampling_is_seeded_and_row_independent():
    params = random_params(6)
    stmts = statements(3, 4)
    seeds = [11, 12, 13, 14]
    batch = policy.sample_batch(params, stmts, seeds, 1.0, 8)
    assert batch == policy.sample_batch(params, stmts, seeds, 1.0, 8)
    for s, sd, row in zip(stmts, seeds, batch):
        assert policy.sample(params, s, policy.SamplerConfig(1.0, 8, sd)) == row
    for row in batch:
        assert 1 <= len(row) <= 8
        assert policy.EOS not in row[:-1]


def test_greedy_decoding_follows_argmax():
    params = random_params(7)
    s = statements(4, 1)[0]
    out = policy.sample(params, s, policy.SamplerConfig(0.0, 3, 0))
    for t, tok in enumerate(out):
        assert tok == int(np.argmax(policy.step_logprobs(params, s, out[:t])))


def test_uniform_policy_single_step_pass_rate():
    """Zero weights give a uniform step distribution, so pass@1 is the share of solving tokens."""
    arch = policy.Architecture()
    params = policy.PolicyParams(arch, np.zeros(arch.n_params))
    s = Statement(lang.parse_expr("(a + 0)"), lang.Var("a"))
    p = single_tactic_solutions(s) / policy.VOCAB_SIZE
    assert p > 0
    n = 10_000
    seqs = policy.sample_batch(params, [s] * n, [policy.derive_seed(99, j) for j in range(n)], 1.0, 1)
    from rlpaf import verifier

    hits = sum(verifier.check_proof(s, policy.decode(o)).success for o in seqs)
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) <= 3 * sigma


def test_entropy_rises_with_temperature():
    params = random_params(8)
    s = statements(5, 1)[0]
    ents = [policy.entropy(policy.step_logprobs(params, s, [], t)) for t in (0.5, 1.0, 2.0)]
    assert ents[0] <= ents[1] <= ents[2]


def test_checkpoint_roundtrip(tmp_path):
    params = random_params(9)
    path = tmp_path / "p.ckpt"
    policy.save_checkpoint(path, params)
    back = policy.load_checkpoint(path)
    assert back.arch == params.arch
    assert np.array_equal(back.theta, params.theta)
    policy.save_checkpoint(tmp_path / "q.ckpt", back)
    assert path.read_bytes() == (tmp_path / "q.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(policy.CheckpointError):
        policy.load_checkpoint(path)
    params = random_params(9)
    policy.save_checkpoint(path, params)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(policy.CheckpointError):
        policy.load_checkpoint(path)


def test_params_are_read_only():
    params = random_params(10)
    with pytest.raises(ValueError):
        params.theta[0] = 1.0

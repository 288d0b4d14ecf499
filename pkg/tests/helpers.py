"""Independent oracles shared by unit and acceptance tests."""
import numpy as np

from rlpaf import curation, grpo, lang, policy


def rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale < 1e-12 else abs(a - b) / scale


def central_diff(f, theta: np.ndarray, direction: np.ndarray, h: float = 1e-5) -> float:
    return (f(theta + h * direction) - f(theta - h * direction)) / (2 * h)


def random_params(seed: int, scale: float = 0.3, state_aware: bool = True) -> policy.PolicyParams:
    arch = policy.Architecture(state_aware=state_aware)
    rng = np.random.default_rng(seed)
    return policy.PolicyParams(arch, rng.normal(0, scale, arch.n_params))


def random_sequence(rng: np.random.Generator, max_len: int = 6) -> list[int]:
    n = int(rng.integers(1, max_len + 1))
    seq = rng.integers(0, policy.EOS, n).tolist()
    if rng.random() < 0.5:
        seq[-1] = policy.EOS
    return seq


def statements(seed: int, n: int):
    return [r.statement for r in curation.gen_statements(seed, n, 3, 3, min_scramble=1)]


def seq_logprob_fd_probes(n_probes: int, seed: int = 0, h: float = 1e-5):
    """Worst relative error of grad_seq_logprob along random directions."""
    rng = np.random.default_rng(seed)
    params = random_params(seed)
    stmts = statements(seed, 10)
    worst = 0.0
    for k in range(n_probes):
        s = stmts[k % len(stmts)]
        o = random_sequence(rng)
        g = policy.grad_seq_logprob(params, s, o)
        d = rng.normal(size=g.shape)
        f = lambda th: policy.seq_logprob(policy.PolicyParams(params.arch, th), s, o)[0]
        worst = max(worst, rel_err(float(g @ d), central_diff(f, params.theta, d, h)))
    return worst


def perturbed_groups(seed: int, n_groups: int = 3, G: int = 4, spread: float = 0.3, variant: str = "grpo"):
    """Groups whose old logprobs differ from the current policy, so some ratios leave the clip band."""
    rng = np.random.default_rng(seed)
    params = random_params(seed, 0.2)
    cfg = grpo.TrainConfig(group_size=G, variant=variant, max_rollout_len=6)
    groups = []
    for s in statements(seed + 1, n_groups):
        outs = [random_sequence(rng) for _ in range(G)]
        cur = policy.token_logprobs(params, [s] * G, outs)
        old = [lp + rng.normal(0, spread, lp.shape) for lp in cur]
        rewards = rng.choice([-1.0, 1.0], G)
        if np.all(rewards == rewards[0]):
            rewards[0] = -rewards[0]
        adv = grpo.compute_advantages(rewards, variant)
        groups.append(grpo.RolloutGroup(s, outs, old, [None] * G, rewards, adv))
    return params, groups, cfg


def grpo_fd_probes(n_probes: int, seed: int = 0, h: float = 1e-5, margin: float = 1e-3):
    """Worst relative error of the clipped objective's gradient, skipping probes near a clip kink."""
    rng = np.random.default_rng(seed)
    params, groups, cfg = perturbed_groups(seed)
    value = lambda th: grpo.grpo_objective(policy.PolicyParams(params.arch, th), groups, cfg)[0]
    _, g = grpo.grpo_objective(params, groups, cfg)
    worst, used = 0.0, 0
    while used < n_probes:
        d = rng.normal(size=g.shape)
        if _near_kink(params, groups, cfg, d, h, margin):
            continue
        worst = max(worst, rel_err(float(g @ d), central_diff(value, params.theta, d, h)))
        used += 1
    return worst


def _near_kink(params, groups, cfg, d, h, margin) -> bool:
    lo, hi = 1 - cfg.epsilon, 1 + cfg.epsilon
    for th in (params.theta - h * d, params.theta, params.theta + h * d):
        p = policy.PolicyParams(params.arch, th)
        for gr in groups:
            for o, old in zip(gr.outputs, gr.old_logprobs):
                r = np.exp(policy.token_logprobs(p, [gr.statement], [o])[0] - old)
                if np.any(np.abs(r - lo) < margin) or np.any(np.abs(r - hi) < margin):
                    return True
    return False


def single_tactic_solutions(s: lang.Statement) -> int:
    """Tactic tokens that prove ``s`` on their own, by enumeration."""
    from rlpaf import verifier

    return sum(
        verifier.check_proof(s, lang.ProofScript((t,))).success for t in policy.TACTIC_TOKENS
    )

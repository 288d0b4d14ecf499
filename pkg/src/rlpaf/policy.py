"""Autoregressive tactic policy with hand-derived gradients.

One token is one whole tactic.  The network sees a fixed-size feature vector
of the statement plus a one-hot window over the last ``window`` emitted
tokens, passes it through one tanh hidden layer and produces a softmax over
the tactic vocabulary (every legal rule/direction at every path of length at
most 3, plus EOS).

Everything works on batches of *rows*: one row is one decoding step of one
sequence.  Sampling, scoring and backprop all reduce to a single matrix pass
over the rows of many sequences at once.
"""
from __future__ import annotations

import functools
import itertools
import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import lang
from .lang import ProofScript, Statement, Tactic

MAX_TOKEN_PATH = 3

PATHS: tuple[tuple[str, ...], ...] = tuple(
    p for n in range(MAX_TOKEN_PATH + 1) for p in itertools.product("LR", repeat=n)
)
PAIRS = tuple(lang.legal_rule_directions())
TACTIC_TOKENS: tuple[Tactic, ...] = tuple(Tactic(r, d, p) for r, d in PAIRS for p in PATHS)
EOS = len(TACTIC_TOKENS)
VOCAB_SIZE = EOS + 1
BEGIN = VOCAB_SIZE  # context padding only, never emitted
_TOKEN_ID = {t: i for i, t in enumerate(TACTIC_TOKENS)}

_KINDS = (lang.Var, lang.Const, lang.Add, lang.Mul)
_KIND_INDEX = {k: i for i, k in enumerate(_KINDS)}
FEATURE_DIM = 8 + 2 + 1 + len(PAIRS) + 64
# token channels: tactic applies, tactic applies and shrinks the term, EOS closes the goal
N_CHANNELS = 3


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


def encode_tactic(t: Tactic) -> int:
    try:
        return _TOKEN_ID[Tactic(t.rule, t.direction, tuple(t.at))]
    except KeyError:
        raise ValueError(f"tactic {t.render()!r} is outside the vocabulary") from None


def encode_script(p: ProofScript, eos: bool = True) -> list[int]:
    tokens = [encode_tactic(t) for t in p]
    return tokens + [EOS] if eos else tokens


def decode(tokens: Sequence[int]) -> ProofScript:
    """Map tokens to tactics, stopping at EOS."""
    tactics = []
    for tok in tokens:
        if tok == EOS:
            break
        tactics.append(TACTIC_TOKENS[tok])
    return ProofScript(tuple(tactics))


def in_vocab(p: ProofScript) -> bool:
    return all(len(t.at) <= MAX_TOKEN_PATH for t in p)


# ---------------------------------------------------------------------------
# Statement features
# ---------------------------------------------------------------------------


def _kind_counts(e) -> np.ndarray:
    out = np.zeros(4)
    for _, sub in lang.positions(e):
        out[_KIND_INDEX[type(sub)]] += 1
    return out


def _pattern_bag(e) -> np.ndarray:
    out = np.zeros(32)
    for _, sub in lang.positions(e):
        if isinstance(sub, lang.BINARY):
            op = 0 if isinstance(sub, lang.Add) else 1
            out[op * 16 + _KIND_INDEX[type(sub[0])] * 4 + _KIND_INDEX[type(sub[1])]] += 1
    return out


@functools.lru_cache(maxsize=65536)
def _encode_cached(s: Statement) -> np.ndarray:
    lhs, rhs = s
    rules = np.zeros(len(PAIRS))
    for _, sub in lang.positions(lhs):
        for k, (r, d) in enumerate(PAIRS):
            if not rules[k] and lang.try_rewrite(r, d, sub) is not None:
                rules[k] = 1.0
    v = np.concatenate(
        [
            _kind_counts(lhs) / 4.0,
            _kind_counts(rhs) / 4.0,
            [lang.depth(lhs) / 4.0, lang.depth(rhs) / 4.0],
            [1.0 if lhs == rhs else 0.0],
            rules,
            _pattern_bag(lhs) / 2.0,
            _pattern_bag(rhs) / 2.0,
        ]
    )
    v.setflags(write=False)
    return v


def encode_statement(s: Statement) -> np.ndarray:
    """Fixed-length feature vector for a statement (length FEATURE_DIM)."""
    return _encode_cached(Statement(*s))


@functools.lru_cache(maxsize=262144)
def _channels_cached(x, rhs) -> np.ndarray:
    out = np.zeros((N_CHANNELS, VOCAB_SIZE))
    if x is None:
        return out
    n = lang.size(x)
    for j, path in enumerate(PATHS):
        try:
            sub = lang.subterm_at(x, path)
        except lang.BadPath:
            continue
        for k, (r, d) in enumerate(PAIRS):
            new_sub = lang.try_rewrite(r, d, sub)
            if new_sub is None:
                continue
            new = lang.replace_at(x, path, new_sub)
            if lang.depth(new) > lang.MAX_DEPTH:
                continue
            t = k * len(PATHS) + j
            out[0, t] = 1.0
            if lang.size(new) < n:
                out[1, t] = 1.0
    out[2, EOS] = 1.0 if x == rhs else 0.0
    out.setflags(write=False)
    return out


def replay(e, tokens: Sequence[int]):
    """Expression reached by running tactic tokens on ``e``; None once a tactic fails."""
    for tok in tokens:
        if e is None or tok == EOS:
            return e
        try:
            e = lang.apply_tactic(e, TACTIC_TOKENS[tok])
        except lang.LangError:
            return None
    return e


def token_channels(s: Statement, prefix: Sequence[int] = (), state_aware: bool = True) -> np.ndarray:
    """Per-token indicator channels, shape (N_CHANNELS, VOCAB_SIZE).

    With ``state_aware`` the channels describe the term reached by replaying
    ``prefix`` on the lhs (all zero once the replay fails); otherwise they
    describe the lhs itself.
    """
    x = replay(s.lhs, prefix) if state_aware else s.lhs
    return _channels_cached(x, s.rhs)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    window: int = 4
    features: int = FEATURE_DIM
    hidden: int = 64
    vocab: int = VOCAB_SIZE
    channels: int = N_CHANNELS
    state_aware: bool = True

    @property
    def context_width(self) -> int:
        return self.window * (self.vocab + 1)

    def shapes(self) -> list[tuple[int, ...]]:
        """Shapes of (W1_feat, W1_ctx, b1, W2, b2, gain_W, gain_b) in theta order."""
        H, V, C = self.hidden, self.vocab, self.channels
        return [(H, self.features), (H, self.context_width), (H,), (V, H), (V,), (C, H), (C,)]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "features": self.features,
            "hidden": self.hidden,
            "vocab": self.vocab,
            "channels": self.channels,
            "state_aware": self.state_aware,
        }


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Immutable snapshot of the flat parameter vector."""

    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got {theta.shape}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def views(self) -> list[np.ndarray]:
        return _views(self.arch, self.theta)

    def updated(self, step: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.arch, self.theta + step)


def init_params(arch: Architecture = Architecture(), seed: int = 0, scale: float = 0.05) -> PolicyParams:
    """Weights uniform in [-scale, scale], biases zero."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(arch.n_params)
    w1f, w1c, _, w2, _, gw, _ = _views(arch, theta)
    for w in (w1f, w1c, w2, gw):
        w[:] = rng.uniform(-scale, scale, w.shape)
    return PolicyParams(arch, theta)


def _views(arch: Architecture, theta: np.ndarray) -> list[np.ndarray]:
    out, o = [], 0
    for shape in arch.shapes():
        n = int(np.prod(shape))
        out.append(theta[o : o + n].reshape(shape))
        o += n
    return out


# ---------------------------------------------------------------------------
# Forward / backward over rows
# ---------------------------------------------------------------------------


def _contexts(prefixes: Sequence[Sequence[int]], window: int) -> np.ndarray:
    out = np.full((len(prefixes), window), BEGIN, dtype=np.int64)
    for r, prefix in enumerate(prefixes):
        tail = list(prefix)[-window:]
        if tail:
            out[r, window - len(tail) :] = tail
    return out


class Rows:
    """Network inputs for a batch of decoding steps."""

    def __init__(self, feats: np.ndarray, ctx: np.ndarray, chan: np.ndarray):
        self.feats = feats  # (n, F)
        self.ctx = ctx  # (n, W) token ids, BEGIN-padded
        self.chan = chan  # (n, C, V)

    def __len__(self) -> int:
        return len(self.ctx)

    @classmethod
    def build(cls, arch: Architecture, statements: Sequence[Statement], prefixes: Sequence[Sequence[int]]) -> "Rows":
        if not statements:
            return cls(
                np.zeros((0, arch.features)), np.zeros((0, arch.window), np.int64), np.zeros((0, arch.channels, arch.vocab))
            )
        feats = np.array([encode_statement(s) for s in statements])
        chan = np.array([token_channels(s, p, arch.state_aware) for s, p in zip(statements, prefixes)])
        return cls(feats, _contexts(prefixes, arch.window), chan)


def _forward(params: PolicyParams, rows: Rows, temperature: float = 1.0):
    """Return (hidden, log-probabilities) for every row."""
    w1f, w1c, b1, w2, b2, gw, gb = params.views()
    cols = rows.ctx + np.arange(rows.ctx.shape[1]) * (params.arch.vocab + 1)
    h = np.tanh(rows.feats @ w1f.T + b1 + w1c.T[cols].sum(axis=1))
    gain = h @ gw.T + gb
    logits = h @ w2.T + b2 + np.einsum("rc,rcv->rv", gain, rows.chan)
    if temperature != 1.0:
        logits = logits / temperature
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return h, logp


def _sequence_rows(params: PolicyParams, statements: Sequence[Statement], seqs: Sequence[Sequence[int]]):
    row_s, prefixes, targets = [], [], []
    for s, seq in zip(statements, seqs):
        for t, tok in enumerate(seq):
            row_s.append(s)
            prefixes.append(seq[:t])
            targets.append(tok)
    return Rows.build(params.arch, row_s, prefixes), np.asarray(targets, dtype=np.int64)


def token_logprobs(params: PolicyParams, statements: Sequence[Statement], seqs: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Per-token log-probabilities of each sequence, in one batched pass."""
    rows, targets = _sequence_rows(params, statements, seqs)
    if len(targets) == 0:
        return [np.zeros(0) for _ in seqs]
    _, logp = _forward(params, rows)
    picked = logp[np.arange(len(targets)), targets]
    bounds = np.cumsum([0] + [len(s) for s in seqs])
    return [picked[lo:hi].copy() for lo, hi in zip(bounds, bounds[1:])]


def backprop(
    params: PolicyParams,
    statements: Sequence[Statement],
    seqs: Sequence[Sequence[int]],
    coefs: Sequence[Sequence[float]],
) -> np.ndarray:
    """Gradient of sum_{k,t} coefs[k][t] * log pi(seqs[k][t] | prefix) w.r.t. theta."""
    rows, targets = _sequence_rows(params, statements, seqs)
    grad = np.zeros(params.arch.n_params)
    if len(targets) == 0:
        return grad
    c = np.concatenate([np.asarray(cf, dtype=np.float64) for cf in coefs])
    w1f, w1c, b1, w2, b2, gw, gb = params.views()
    h, logp = _forward(params, rows)
    # d logp[target] / d logits = onehot(target) - softmax
    g = -np.exp(logp) * c[:, None]
    g[np.arange(len(targets)), targets] += c
    d_gw1f, d_gw1c, d_b1, d_w2, d_b2, d_gw, d_gb = _views(params.arch, grad)
    d_w2 += g.T @ h
    d_b2 += g.sum(axis=0)
    d_gain = np.einsum("rv,rcv->rc", g, rows.chan)
    d_gw += d_gain.T @ h
    d_gb += d_gain.sum(axis=0)
    da = (g @ w2 + d_gain @ gw) * (1.0 - h * h)
    d_gw1f += da.T @ rows.feats
    d_b1 += da.sum(axis=0)
    cols = rows.ctx + np.arange(rows.ctx.shape[1]) * (params.arch.vocab + 1)
    contrib = np.zeros((params.arch.context_width, params.arch.hidden))
    np.add.at(contrib, cols.ravel(), np.repeat(da, rows.ctx.shape[1], axis=0))
    d_gw1c += contrib.T
    return grad


# ---------------------------------------------------------------------------
# Public single-sequence API
# ---------------------------------------------------------------------------


def step_logprobs(params: PolicyParams, s: Statement, prefix: Sequence[int] = (), temperature: float = 1.0) -> np.ndarray:
    _, logp = _forward(params, Rows.build(params.arch, [s], [list(prefix)]), temperature)
    return logp[0]


def seq_logprob(params: PolicyParams, s: Statement, o: Sequence[int]) -> tuple[float, np.ndarray]:
    per_token = token_logprobs(params, [s], [list(o)])[0]
    return float(per_token.sum()), per_token


def grad_seq_logprob(params: PolicyParams, s: Statement, o: Sequence[int]) -> np.ndarray:
    return backprop(params, [s], [list(o)], [np.ones(len(o))])


def sft_step(params: PolicyParams, batch: Sequence[tuple[Statement, Sequence[int]]], lr: float) -> PolicyParams:
    """One ascent step on the mean sequence log-likelihood of ``batch``."""
    if not batch:
        raise ValueError("empty SFT batch")
    if lr == 0:
        return params
    statements = [s for s, _ in batch]
    seqs = [list(o) for _, o in batch]
    grad = backprop(params, statements, seqs, [np.ones(len(o)) for o in seqs])
    return params.updated(lr * grad / len(batch))


def mean_nll(params: PolicyParams, batch: Sequence[tuple[Statement, Sequence[int]]]) -> float:
    if not batch:
        return 0.0
    lps = token_logprobs(params, [s for s, _ in batch], [list(o) for _, o in batch])
    return float(-np.mean([lp.sum() for lp in lps]))


def entropy(logp: np.ndarray) -> float:
    return float(-(np.exp(logp) * logp).sum())


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    """``temperature=0`` means argmax decoding."""

    temperature: float = 1.0
    max_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be positive (0 selects argmax decoding)")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def sample_batch(
    params: PolicyParams,
    statements: Sequence[Statement],
    seeds: Sequence[int],
    temperature: float = 1.0,
    max_len: int = 8,
    prefixes: Sequence[Sequence[int]] | None = None,
) -> list[list[int]]:
    """Sample one continuation per (statement, seed) row, all rows in lock-step.

    Each row draws from its own generator, so row ``k`` is identical to a
    single-row call with the same statement and seed.  ``prefixes`` condition
    the window without being part of the returned sequence; ``max_len`` caps
    the returned tokens.
    """
    n = len(statements)
    if prefixes is None:
        prefixes = [[] for _ in range(n)]
    rngs = [np.random.default_rng(int(seed)) for seed in seeds]
    out: list[list[int]] = [[] for _ in range(n)]
    history = [list(p) for p in prefixes]
    active = list(range(n))
    greedy = temperature == 0
    for _ in range(max_len):
        if not active:
            break
        rows = Rows.build(params.arch, [statements[k] for k in active], [history[k] for k in active])
        _, logp = _forward(params, rows, 1.0 if greedy else temperature)
        if greedy:
            toks = logp.argmax(axis=1)
        else:
            cdf = np.cumsum(np.exp(logp), axis=1)
            u = np.array([rngs[k].random() for k in active]) * cdf[:, -1]
            toks = np.minimum((cdf < u[:, None]).sum(axis=1), params.arch.vocab - 1)
        still = []
        for k, tok in zip(active, toks.tolist()):
            out[k].append(tok)
            history[k].append(tok)
            if tok != EOS:
                still.append(k)
        active = still
    return out


def sample(params: PolicyParams, s: Statement, cfg: SamplerConfig = SamplerConfig()) -> list[int]:
    return sample_batch(params, [s], [cfg.seed], cfg.temperature, cfg.max_len)[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"RLPAFCKP"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: PolicyParams) -> None:
    """Header (magic, version, JSON architecture) then theta as little-endian float64."""
    desc = json.dumps(params.arch.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc)))
        fh.write(desc)
        fh.write(params.theta.astype("<f8").tobytes())


def load_checkpoint(path, expect: Architecture | None = None) -> PolicyParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a policy checkpoint")
    version, n = struct.unpack_from("<II", blob, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(CHECKPOINT_MAGIC) + 8
    arch = Architecture(**json.loads(blob[start : start + n]))
    if expect is not None and arch != expect:
        raise CheckpointError(f"{path}: architecture {arch} does not match {expect}")
    if arch.vocab != VOCAB_SIZE or arch.features != FEATURE_DIM or arch.channels != N_CHANNELS:
        raise CheckpointError(f"{path}: checkpoint built for a different vocabulary or feature set")
    theta = np.frombuffer(blob[start + n :], dtype="<f8")
    if theta.size != arch.n_params:
        raise CheckpointError(f"{path}: expected {arch.n_params} parameters, found {theta.size}")
    return PolicyParams(arch, theta.astype(np.float64))

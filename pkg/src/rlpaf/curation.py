"""Statement generation, pass@N bookkeeping, expert iteration and prefix repair."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import lang, policy, verifier
from .lang import Expr, ProofScript, Statement, Tactic
from .policy import PolicyParams
from .verifier import VerifierOutcome

MAX_GEN_DEPTH = 4
MAX_SCRAMBLE = 5
SCRAMBLE_RETRIES = 100
LEAF_PROB = 0.3
VAR_PROB = 0.6
SAMPLE_CHUNK = 4096

# const_fold and mul_zero lose information, so a scramble built from them has no inverse witness
SCRAMBLE_MOVES = tuple((r, d) for r, d in lang.legal_rule_directions() if lang.RULES[r].reversible)


class GenerationExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class StatementRecord:
    id: int
    statement: Statement
    source: str = "gen"
    scramble_steps: int = 0
    pass_count: int | None = None
    min_proof_len: int | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "lhs": lang.render_expr(self.statement.lhs),
            "rhs": lang.render_expr(self.statement.rhs),
            "source": self.source,
            "scramble_steps": self.scramble_steps,
        }

    @classmethod
    def from_json(cls, d: dict) -> "StatementRecord":
        return cls(
            id=int(d["id"]),
            statement=Statement(lang.parse_expr(d["lhs"]), lang.parse_expr(d["rhs"])),
            source=str(d.get("source", "gen")),
            scramble_steps=int(d.get("scramble_steps", 0)),
        )


@dataclass(frozen=True)
class ProofRecord:
    statement_id: int
    script: ProofScript
    verified: bool = True

    def to_json(self) -> dict:
        return {"statement_id": self.statement_id, "script": self.script.render(), "verified": self.verified}

    @classmethod
    def from_json(cls, d: dict) -> "ProofRecord":
        return cls(int(d["statement_id"]), lang.parse_script(d["script"]), bool(d["verified"]))


@dataclass(frozen=True)
class RepairPair:
    statement: Statement
    failing: ProofScript
    outcome: VerifierOutcome
    repaired: ProofScript
    statement_id: int | None = None

    def __post_init__(self):
        k = self.outcome.first_failure
        if self.outcome.success or k is None:
            raise ValueError("a repair pair needs a failing outcome with a first_failure index")
        if self.repaired.tactics[:k] != self.failing.tactics[:k]:
            raise ValueError("repaired script must keep the failing prefix")

    def to_json(self) -> dict:
        return {
            "statement_id": self.statement_id,
            "lhs": lang.render_expr(self.statement.lhs),
            "rhs": lang.render_expr(self.statement.rhs),
            "failing": self.failing.render(),
            "first_failure": self.outcome.first_failure,
            "repaired": self.repaired.render(),
        }


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def random_expr(rng: np.random.Generator, max_depth: int) -> Expr:
    if max_depth <= 1 or rng.random() < LEAF_PROB:
        if rng.random() < VAR_PROB:
            return lang.Var(lang.VARIABLES[rng.integers(len(lang.VARIABLES))])
        return lang.Const(int(rng.integers(0, lang.MAX_LEAF_CONST + 1)))
    op = "+" if rng.random() < 0.5 else "*"
    return lang.make_binary(op, random_expr(rng, max_depth - 1), random_expr(rng, max_depth - 1))


def scramble(rng: np.random.Generator, e: Expr, steps: int) -> Expr:
    """Apply ``steps`` random reversible rewrites to ``e``."""
    fails = 0
    done = 0
    while done < steps:
        rule, direction = SCRAMBLE_MOVES[rng.integers(len(SCRAMBLE_MOVES))]
        options = []
        for path, _ in lang.positions(e):
            try:
                options.append(lang.apply_tactic(e, Tactic(rule, direction, path)))
            except lang.LangError:
                pass
        if not options:
            fails += 1
            if fails >= SCRAMBLE_RETRIES:
                raise GenerationExhausted(f"{fails} consecutive scramble attempts failed on {lang.render_expr(e)}")
            continue
        fails = 0
        e = options[rng.integers(len(options))]
        done += 1
    return e


def gen_statements(
    seed: int,
    n: int,
    max_depth: int = 3,
    scramble_steps: int = 3,
    min_scramble: int | None = None,
    source: str = "gen",
    first_id: int = 0,
) -> list[StatementRecord]:
    """Random statements ``scrambled(e) = e``, provable by undoing the scramble.

    With ``min_scramble`` set, each record draws its own step count uniformly
    from ``[min_scramble, scramble_steps]``.
    """
    if not 1 <= max_depth <= MAX_GEN_DEPTH:
        raise ValueError(f"max_depth must lie in [1, {MAX_GEN_DEPTH}]")
    if not 0 <= scramble_steps <= MAX_SCRAMBLE:
        raise ValueError(f"scramble_steps must lie in [0, {MAX_SCRAMBLE}]")
    lo = scramble_steps if min_scramble is None else min_scramble
    if not 0 <= lo <= scramble_steps:
        raise ValueError("min_scramble must lie in [0, scramble_steps]")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        steps = int(rng.integers(lo, scramble_steps + 1))
        e = random_expr(rng, max_depth)
        out.append(StatementRecord(first_id + i, Statement(scramble(rng, e, steps), e), source, steps))
    return out


# ---------------------------------------------------------------------------
# pass@N
# ---------------------------------------------------------------------------


def sample_scripts(
    params: PolicyParams,
    statements: Sequence[Statement],
    seeds: Sequence[int],
    n: int,
    temperature: float = 1.0,
    max_len: int = 8,
) -> list[list[list[int]]]:
    """``n`` samples per statement; sample ``j`` of statement ``k`` uses seed ``derive_seed(seeds[k], j)``."""
    rows = [(k, policy.derive_seed(seed, j)) for k, seed in enumerate(seeds) for j in range(n)]
    out: list[list[list[int]]] = [[] for _ in statements]
    for lo in range(0, len(rows), SAMPLE_CHUNK):
        chunk = rows[lo : lo + SAMPLE_CHUNK]
        seqs = policy.sample_batch(
            params, [statements[k] for k, _ in chunk], [sd for _, sd in chunk], temperature, max_len
        )
        for (k, _), seq in zip(chunk, seqs):
            out[k].append(seq)
    return out


def pass_matrix(
    params: PolicyParams,
    statements: Sequence[Statement],
    seeds: Sequence[int],
    n: int,
    temperature: float = 1.0,
    max_len: int = 8,
    workers: int = 1,
    step_budget: int = verifier.DEFAULT_STEP_BUDGET,
    return_outcomes: bool = False,
):
    """Boolean (statements x n) matrix of verified samples."""
    samples = sample_scripts(params, statements, seeds, n, temperature, max_len)
    items = [(s, policy.decode(o)) for s, seqs in zip(statements, samples) for o in seqs]
    outcomes = verifier.verify_batch(items, workers=workers, step_budget=step_budget)
    mat = np.array([o.success for o in outcomes], dtype=bool).reshape(len(statements), n)
    if return_outcomes:
        return mat, samples, [outcomes[k * n : (k + 1) * n] for k in range(len(statements))]
    return mat


def estimate_pass(
    params: PolicyParams, s: Statement, N: int, temperature: float = 1.0, seed: int = 0, max_len: int = 8
) -> int:
    """Number of verified proofs among ``N`` seeded samples (nested in ``N``)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return int(pass_matrix(params, [s], [seed], N, temperature, max_len).sum())


def record_seed(seed: int, record: StatementRecord) -> int:
    return policy.derive_seed(seed, record.id)


def with_pass_counts(
    params: PolicyParams,
    records: Sequence[StatementRecord],
    N: int = 32,
    temperature: float = 1.0,
    seed: int = 0,
    max_len: int = 8,
    workers: int = 1,
) -> list[StatementRecord]:
    mat = pass_matrix(
        params, [r.statement for r in records], [record_seed(seed, r) for r in records], N, temperature, max_len, workers
    )
    return [replace(r, pass_count=int(c)) for r, c in zip(records, mat.sum(axis=1))]


def in_window(records: Sequence[StatementRecord], lo: int, hi: int) -> list[StatementRecord]:
    return [r for r in records if r.pass_count is not None and lo <= r.pass_count <= hi]


def select_rl_pool(
    records: Sequence[StatementRecord],
    params: PolicyParams,
    N: int = 32,
    lo: int = 2,
    hi: int = 16,
    temperature: float = 1.0,
    seed: int = 0,
    max_len: int = 8,
    workers: int = 1,
) -> list[StatementRecord]:
    """Keep statements whose verified count among ``N`` samples lies in ``[lo, hi]``."""
    if not 0 <= lo <= hi <= N:
        raise ValueError("need 0 <= lo <= hi <= N")
    scored = with_pass_counts(params, records, N, temperature, seed, max_len, workers)
    return in_window(scored, lo, hi)


def pass_histogram(records: Sequence[StatementRecord], N: int) -> np.ndarray:
    hist = np.zeros(N + 1, dtype=int)
    for r in records:
        if r.pass_count is not None:
            hist[r.pass_count] += 1
    return hist


# ---------------------------------------------------------------------------
# Expert iteration
# ---------------------------------------------------------------------------


@dataclass
class ExpertIterationResult:
    params: PolicyParams
    corpus: list[ProofRecord]
    coverage: list[float] = field(default_factory=list)
    losses: list[dict] = field(default_factory=list)


def sft_epochs(
    params: PolicyParams,
    pairs: Sequence[tuple[Statement, list[int]]],
    lr: float,
    epochs: int,
    batch_size: int = 32,
    seed: int = 0,
) -> tuple[PolicyParams, list[float]]:
    """Minibatch SFT; returns the params and the mean NLL after each epoch."""
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for lo in range(0, len(pairs), batch_size):
            params = policy.sft_step(params, [pairs[i] for i in order[lo : lo + batch_size]], lr)
        losses.append(policy.mean_nll(params, pairs))
    return params, losses


def expert_iteration(
    params: PolicyParams,
    records: Sequence[StatementRecord],
    rounds: int,
    samples_per_stmt: int,
    sft_lr: float,
    sft_epochs_per_round: int,
    batch_size: int = 32,
    temperature: float = 1.0,
    max_len: int = 8,
    seed: int = 0,
    workers: int = 1,
) -> ExpertIterationResult:
    """Alternate sampling, harvesting verified proofs, and SFT on the harvest.

    The corpus accumulates across rounds and is deduplicated per statement by
    exact script text.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    corpus: list[ProofRecord] = []
    seen: set[tuple[int, str]] = set()
    by_id = {r.id: r for r in records}
    result = ExpertIterationResult(params, corpus)
    for rnd in range(rounds):
        seeds = [policy.derive_seed(seed, rnd, r.id) for r in records]
        mat, samples, _ = pass_matrix(
            params, [r.statement for r in records], seeds, samples_per_stmt, temperature, max_len, workers,
            return_outcomes=True,
        )
        for r, row, seqs in zip(records, mat, samples):
            for ok, seq in zip(row, seqs):
                if not ok:
                    continue
                script = policy.decode(seq)
                key = (r.id, script.render())
                if key not in seen:
                    seen.add(key)
                    corpus.append(ProofRecord(r.id, script, True))
        solved = {p.statement_id for p in corpus}
        result.coverage.append(len(solved) / max(len(records), 1))
        pairs = [(by_id[p.statement_id].statement, policy.encode_script(p.script)) for p in corpus]
        if pairs:
            params, losses = sft_epochs(
                params, pairs, sft_lr, sft_epochs_per_round, batch_size, policy.derive_seed(seed, rnd, 0xC0DE)
            )
            for e, loss in enumerate(losses):
                result.losses.append({"round": rnd, "epoch": e, "loss": loss, "corpus_size": len(pairs)})
    result.params = params
    return result


# ---------------------------------------------------------------------------
# Prefix repair
# ---------------------------------------------------------------------------


def prefix_repair(
    params: PolicyParams,
    s: Statement,
    failed: ProofScript,
    outcome: VerifierOutcome,
    attempts: int = 16,
    seed: int = 0,
    temperature: float = 1.0,
    max_len: int = 8,
    step_budget: int = verifier.DEFAULT_STEP_BUDGET,
    statement_id: int | None = None,
) -> RepairPair | None:
    """Cut ``failed`` before its first bad tactic and re-sample the rest."""
    k = outcome.first_failure
    if k is None:
        raise ValueError("prefix repair needs an outcome with a first_failure index")
    kept = ProofScript(failed.tactics[:k])
    if not policy.in_vocab(kept):
        return None
    prefix = policy.encode_script(kept, eos=False)
    suffixes = policy.sample_batch(
        params, [s] * attempts, [policy.derive_seed(seed, j) for j in range(attempts)], temperature, max_len,
        prefixes=[prefix] * attempts,
    )
    for suffix in suffixes:
        candidate = ProofScript(kept.tactics + policy.decode(suffix).tactics)
        if verifier.check_proof(s, candidate, step_budget).success:
            return RepairPair(s, failed, outcome, candidate, statement_id)
    return None


# ---------------------------------------------------------------------------
# Corpus I/O
# ---------------------------------------------------------------------------


class CorpusFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _read_jsonl(path, parse):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except (ValueError, KeyError, TypeError, lang.LangError) as err:
                raise CorpusFormatError(path, lineno, str(err)) from None
    return out


def read_statements(path) -> list[StatementRecord]:
    return _read_jsonl(path, StatementRecord.from_json)


def read_proofs(path) -> list[ProofRecord]:
    return _read_jsonl(path, ProofRecord.from_json)


def read_repairs(path) -> list[dict]:
    def parse(d):
        s = Statement(lang.parse_expr(d["lhs"]), lang.parse_expr(d["rhs"]))
        return {
            "statement_id": d["statement_id"],
            "statement": s,
            "failing": lang.parse_script(d["failing"]),
            "first_failure": int(d["first_failure"]),
            "repaired": lang.parse_script(d["repaired"]),
        }

    return _read_jsonl(path, parse)

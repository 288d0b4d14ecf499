"""Proof checking, rewards, batched verification and a brute-force prover."""
from __future__ import annotations

import enum
import json
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from . import lang
from .lang import Expr, ProofScript, Statement, Tactic

DEFAULT_STEP_BUDGET = 32
DEFAULT_NODE_CAP = 2_000_000


class Status(str, enum.Enum):
    SUCCESS = "Success"
    PARSE_ERROR = "ParseError"
    UNKNOWN_RULE = "UnknownRule"
    BAD_PATH = "BadPath"
    RULE_MISMATCH = "RuleMismatch"
    ILLEGAL_DIRECTION = "IllegalDirection"
    DEPTH_ERROR = "DepthError"
    STEP_BUDGET_EXCEEDED = "StepBudgetExceeded"
    UNSOLVED_GOAL = "UnsolvedGoal"


# statuses that point at a specific tactic
TACTIC_ERRORS = frozenset(
    {Status.UNKNOWN_RULE, Status.BAD_PATH, Status.RULE_MISMATCH, Status.ILLEGAL_DIRECTION, Status.DEPTH_ERROR}
)

_ERROR_STATUS = {
    lang.BadPath: Status.BAD_PATH,
    lang.RuleMismatch: Status.RULE_MISMATCH,
    lang.IllegalDirection: Status.ILLEGAL_DIRECTION,
    lang.DepthError: Status.DEPTH_ERROR,
    lang.UnknownRule: Status.UNKNOWN_RULE,
}


class NoOpRewrite(NamedTuple):
    index: int

    def __str__(self) -> str:
        return f"NoOpRewrite({self.index})"


@dataclass(frozen=True)
class VerifierOutcome:
    status: Status
    first_failure: int | None = None
    warnings: tuple[NoOpRewrite, ...] = ()
    final_lhs: Expr | None = None
    message: str = field(default="", compare=False)

    @property
    def success(self) -> bool:
        return self.status is Status.SUCCESS

    def error_text(self) -> str:
        """Lean-style feedback line, used when rendering repair prompts."""
        if self.success:
            return ""
        where = f"tactic {self.first_failure}: " if self.first_failure is not None else ""
        return f"error: {self.status.value}: {where}{self.message}".rstrip(": ")


@dataclass(frozen=True)
class RewardConfig:
    r_success: float = 1.0
    r_fail: float = -1.0

    def __post_init__(self):
        if not self.r_success > self.r_fail:
            raise ValueError("r_success must exceed r_fail")


class SearchBudgetExceeded(Exception):
    pass


def check_proof(s: Statement, p: ProofScript, step_budget: int = DEFAULT_STEP_BUDGET) -> VerifierOutcome:
    """Run ``p`` against ``s.lhs``.  Failures are returned, never raised."""
    if step_budget < 1:
        raise ValueError("step_budget must be >= 1")
    e = s.lhs
    warnings = []
    for i, tactic in enumerate(p):
        if i >= step_budget:
            return VerifierOutcome(
                Status.STEP_BUDGET_EXCEEDED, None, tuple(warnings), e, f"more than {step_budget} steps"
            )
        try:
            new = lang.apply_tactic(e, tactic)
        except lang.LangError as err:
            return VerifierOutcome(_ERROR_STATUS[type(err)], i, tuple(warnings), e, str(err))
        if new == e:
            warnings.append(NoOpRewrite(i))
        e = new
    if e == s.rhs:
        return VerifierOutcome(Status.SUCCESS, None, tuple(warnings), e)
    return VerifierOutcome(
        Status.UNSOLVED_GOAL, None, tuple(warnings), e, f"unsolved goal {lang.render_expr(e)} = {lang.render_expr(s.rhs)}"
    )


def check_text(s: Statement, text: str, step_budget: int = DEFAULT_STEP_BUDGET) -> VerifierOutcome:
    """Like :func:`check_proof` but starts from script source text."""
    try:
        script = lang.parse_script(text)
    except lang.UnknownRule as err:
        # the index counts tactic lines only, matching first_failure elsewhere
        tactic_lines = [ln for ln in text.splitlines()[: err.line - 1] if ln.strip() and not ln.strip().startswith("--")]
        return VerifierOutcome(Status.UNKNOWN_RULE, len(tactic_lines), (), s.lhs, str(err))
    except lang.ParseError as err:
        return VerifierOutcome(Status.PARSE_ERROR, None, (), s.lhs, str(err))
    return check_proof(s, script, step_budget)


def reward_of(o: VerifierOutcome, cfg: RewardConfig = RewardConfig()) -> float:
    return cfg.r_success if o.status is Status.SUCCESS else cfg.r_fail


def _check_chunk(args):
    items, step_budget = args
    return [check_proof(s, p, step_budget) for s, p in items]


def verify_batch(
    items: Sequence[tuple[Statement, ProofScript]],
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> list[VerifierOutcome]:
    """Check every (statement, script) pair, preserving input order.

    With ``workers > 1`` the items are split into contiguous chunks and checked
    in a process pool; the result is the same list a sequential map produces.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    items = list(items)
    if workers == 1 or len(items) < 2 * workers:
        return _check_chunk((items, step_budget))
    n_chunks = workers * 4
    bounds = [len(items) * k // n_chunks for k in range(n_chunks + 1)]
    chunks = [(items[lo:hi], step_budget) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
    out: list[VerifierOutcome] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_check_chunk, chunks):
            out.extend(part)
    return out


def outcome_record(index: int, o: VerifierOutcome, cfg: RewardConfig = RewardConfig()) -> dict:
    return {
        "index": index,
        "status": o.status.value,
        "first_failure": o.first_failure,
        "warnings": [str(w) for w in o.warnings],
        "reward": reward_of(o, cfg),
    }


def write_outcomes(path, outcomes: Iterable[VerifierOutcome], cfg: RewardConfig = RewardConfig()) -> None:
    with open(path, "w") as fh:
        for i, o in enumerate(outcomes):
            fh.write(json.dumps(outcome_record(i, o, cfg)) + "\n")


# ---------------------------------------------------------------------------
# Brute-force prover
# ---------------------------------------------------------------------------


def successors(e: Expr, max_depth: int = lang.MAX_DEPTH):
    """Yield ``(tactic, result)`` for every tactic that applies to ``e``."""
    pairs = lang.legal_rule_directions()
    for path, sub in lang.positions(e):
        for rule, direction in pairs:
            new_sub = lang.try_rewrite(rule, direction, sub)
            if new_sub is None:
                continue
            new = lang.replace_at(e, path, new_sub)
            if lang.depth(new) <= max_depth:
                yield Tactic(rule, direction, path), new


def oracle_prove(
    s: Statement,
    max_steps: int,
    node_cap: int = DEFAULT_NODE_CAP,
) -> ProofScript | None:
    """Breadth-first search for a shortest script rewriting ``s.lhs`` to ``s.rhs``.

    Returns None when no script of at most ``max_steps`` tactics exists.
    Raises SearchBudgetExceeded once more than ``node_cap`` states are seen.
    """
    if s.lhs == s.rhs:
        return ProofScript(())
    parent: dict[Expr, tuple[Expr, Tactic] | None] = {s.lhs: None}
    frontier = [s.lhs]
    for _ in range(max_steps):
        nxt = []
        for e in frontier:
            for tactic, new in successors(e):
                if new in parent:
                    continue
                parent[new] = (e, tactic)
                if new == s.rhs:
                    return _trace(parent, new)
                if len(parent) > node_cap:
                    raise SearchBudgetExceeded(f"more than {node_cap} states")
                nxt.append(new)
        if not nxt:
            break
        frontier = nxt
    return None


def _trace(parent, e) -> ProofScript:
    tactics = deque()
    while parent[e] is not None:
        e, tactic = parent[e]
        tactics.appendleft(tactic)
    return ProofScript(tuple(tactics))

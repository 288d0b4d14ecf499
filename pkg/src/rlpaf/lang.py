"""Toy equational proof language.

Expressions are fully parenthesized trees over variables ``a b c``, small
constants, ``+`` and ``*``.  A proof is a list of rewrite tactics, each naming
a rule, a direction and the path of the subterm it rewrites::

    rw add_zero at .
    rw <- add_assoc at L.R

Every value here is an immutable tuple, so hashing and equality are cheap and
the brute-force search in :mod:`rlpaf.verifier` can use them as dict keys.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Union

MAX_DEPTH = 8
MAX_CONST = 99
MAX_LEAF_CONST = 9
VARIABLES = ("a", "b", "c")


class LangError(Exception):
    """Base class for every error raised by the proof language."""


class ParseError(LangError):
    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line


class UnknownRule(LangError):
    def __init__(self, name: str, line: int | None = None):
        super().__init__(f"unknown rule {name!r}" + (f" (line {line})" if line else ""))
        self.name = name
        self.line = line


class DepthError(LangError):
    pass


class BadPath(LangError):
    pass


class RuleMismatch(LangError):
    pass


class IllegalDirection(LangError):
    pass


# Each node kind is a tuple subclass.  The trailing ``op`` field keeps
# Add(x, y) and Mul(x, y) unequal as tuples.
class Var(NamedTuple):
    name: str


class Const(NamedTuple):
    value: int


class Add(NamedTuple):
    left: "Expr"
    right: "Expr"
    op: str = "+"


class Mul(NamedTuple):
    left: "Expr"
    right: "Expr"
    op: str = "*"


Expr = Union[Var, Const, Add, Mul]
BINARY = (Add, Mul)


class Statement(NamedTuple):
    lhs: Expr
    rhs: Expr

    def __str__(self) -> str:
        return f"{render_expr(self.lhs)} = {render_expr(self.rhs)}"


Path = tuple  # tuple of "L" / "R"
ROOT: Path = ()


def depth(e: Expr) -> int:
    """Number of levels in the tree; a single leaf has depth 1."""
    if isinstance(e, BINARY):
        return 1 + max(depth(e[0]), depth(e[1]))
    return 1


def size(e: Expr) -> int:
    if isinstance(e, BINARY):
        return 1 + size(e[0]) + size(e[1])
    return 1


def make_binary(op: str, left: Expr, right: Expr) -> Expr:
    return Add(left, right) if op == "+" else Mul(left, right)


# ---------------------------------------------------------------------------
# Expressions: parse / render
# ---------------------------------------------------------------------------

def parse_expr(text: str, max_depth: int = MAX_DEPTH) -> Expr:
    """Parse ``E := var | const | ( E + E ) | ( E * E )``.

    Raises ParseError (with the byte offset of the problem) on malformed input
    and DepthError when the tree is deeper than ``max_depth``.
    """
    data = text.encode()
    pos = 0

    def next_token() -> tuple[str, int]:
        nonlocal pos
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        start = pos
        if pos >= len(data):
            return "", start
        ch = chr(data[pos])
        if ch.isdigit():
            while pos < len(data) and chr(data[pos]).isdigit():
                pos += 1
            return data[start:pos].decode(), start
        if ch in "abc()+*":
            pos += 1
            return ch, start
        raise ParseError(f"unexpected character {ch!r}", offset=start)

    def parse() -> Expr:
        tok, at = next_token()
        if tok.isdigit():
            if int(tok) > MAX_CONST:
                raise ParseError(f"constant {tok} exceeds {MAX_CONST}", offset=at)
            return Const(int(tok))
        if tok in VARIABLES:
            return Var(tok)
        if tok != "(":
            raise ParseError(f"expected expression, got {tok or 'end of input'!r}", offset=at)
        left = parse()
        op, at = next_token()
        if op not in ("+", "*"):
            raise ParseError(f"expected '+' or '*', got {op or 'end of input'!r}", offset=at)
        right = parse()
        tok, at = next_token()
        if tok != ")":
            raise ParseError(f"expected ')', got {tok or 'end of input'!r}", offset=at)
        return make_binary(op, left, right)

    e = parse()
    tok, at = next_token()
    if tok:
        raise ParseError(f"trailing input {tok!r}", offset=at)
    if depth(e) > max_depth:
        raise DepthError(f"expression depth {depth(e)} exceeds {max_depth}")
    return e


def render_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        return str(e.value)
    return f"({render_expr(e[0])} {e.op} {render_expr(e[1])})"


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


def render_path(p: Path) -> str:
    return ".".join(p) if p else "."


def parse_path(text: str) -> Path:
    if text == ".":
        return ROOT
    steps = tuple(text.split("."))
    if not all(s in ("L", "R") for s in steps) or len(steps) > MAX_DEPTH - 1:
        raise ParseError(f"bad path {text!r}")
    return steps


def subterm_at(e: Expr, p: Path) -> Expr:
    for step in p:
        if not isinstance(e, BINARY):
            raise BadPath(f"path {render_path(p)} descends into a leaf")
        e = e[0] if step == "L" else e[1]
    return e


def replace_at(e: Expr, p: Path, new: Expr) -> Expr:
    if not p:
        return new
    if not isinstance(e, BINARY):
        raise BadPath(f"path {render_path(p)} descends into a leaf")
    if p[0] == "L":
        return type(e)(replace_at(e[0], p[1:], new), e[1])
    return type(e)(e[0], replace_at(e[1], p[1:], new))


def positions(e: Expr, prefix: Path = ROOT):
    """Yield ``(path, subterm)`` for every node, pre-order, left before right."""
    yield prefix, e
    if isinstance(e, BINARY):
        yield from positions(e[0], prefix + ("L",))
        yield from positions(e[1], prefix + ("R",))


# ---------------------------------------------------------------------------
# Rewrite rules
# ---------------------------------------------------------------------------


class Meta(NamedTuple):
    """Pattern variable in a rule template."""

    name: str
    meta: bool = True


X, Y, Z = Meta("X"), Meta("Y"), Meta("Z")


@dataclass(frozen=True)
class RewriteRule:
    id: str
    pattern: object
    replacement: object
    reversible: bool = True


RULES: dict[str, RewriteRule] = {
    r.id: r
    for r in (
        RewriteRule("add_comm", Add(X, Y), Add(Y, X)),
        RewriteRule("mul_comm", Mul(X, Y), Mul(Y, X)),
        RewriteRule("add_assoc", Add(Add(X, Y), Z), Add(X, Add(Y, Z))),
        RewriteRule("mul_assoc", Mul(Mul(X, Y), Z), Mul(X, Mul(Y, Z))),
        RewriteRule("distrib", Mul(X, Add(Y, Z)), Add(Mul(X, Y), Mul(X, Z))),
        RewriteRule("add_zero", Add(X, Const(0)), X),
        RewriteRule("mul_one", Mul(X, Const(1)), X),
        # the replacement forgets X, so the rule cannot be run backwards
        RewriteRule("mul_zero", Mul(X, Const(0)), Const(0), reversible=False),
        RewriteRule("const_fold", None, None, reversible=False),
    )
}
RULE_IDS = tuple(RULES)
DIRECTIONS = ("fwd", "rev")


def _match(pattern, e: Expr, env: dict) -> bool:
    if isinstance(pattern, Meta):
        bound = env.get(pattern.name)
        if bound is None:
            env[pattern.name] = e
            return True
        return bound == e
    if isinstance(pattern, (Var, Const)):
        return pattern == e
    return type(pattern) is type(e) and _match(pattern[0], e[0], env) and _match(pattern[1], e[1], env)


def _build(template, env: dict) -> Expr:
    if isinstance(template, Meta):
        return env[template.name]
    if isinstance(template, BINARY):
        return type(template)(_build(template[0], env), _build(template[1], env))
    return template


def try_rewrite(rule_id: str, direction: str, e: Expr) -> Expr | None:
    """Root rewrite of ``e`` for a legal (rule, direction), or None if it does not match."""
    if rule_id == "const_fold":
        if isinstance(e, BINARY) and isinstance(e[0], Const) and isinstance(e[1], Const):
            value = e[0].value + e[1].value if isinstance(e, Add) else e[0].value * e[1].value
            if value <= MAX_CONST:
                return Const(value)
        return None
    rule = RULES[rule_id]
    pattern, replacement = (rule.pattern, rule.replacement) if direction == "fwd" else (rule.replacement, rule.pattern)
    env: dict = {}
    if not _match(pattern, e, env):
        return None
    return _build(replacement, env)


def rewrite(rule_id: str, direction: str, e: Expr) -> Expr:
    """Rewrite ``e`` at its root; raises RuleMismatch or IllegalDirection."""
    try:
        rule = RULES[rule_id]
    except KeyError:
        raise UnknownRule(rule_id) from None
    if direction == "rev" and not rule.reversible:
        raise IllegalDirection(f"{rule_id} cannot be applied in reverse")
    new = try_rewrite(rule_id, direction, e)
    if new is None:
        raise RuleMismatch(f"{rule_id} ({direction}) does not match {render_expr(e)}")
    return new


# ---------------------------------------------------------------------------
# Tactics and scripts
# ---------------------------------------------------------------------------


class Tactic(NamedTuple):
    rule: str
    direction: str = "fwd"
    at: Path = ROOT

    def render(self) -> str:
        arrow = "<- " if self.direction == "rev" else ""
        return f"rw {arrow}{self.rule} at {render_path(self.at)}"


def legal_rule_directions() -> list[tuple[str, str]]:
    """(rule, direction) pairs that may appear in a tactic, in table order."""
    return [(r, d) for r in RULE_IDS for d in DIRECTIONS if d == "fwd" or RULES[r].reversible]


def apply_tactic(e: Expr, t: Tactic, max_depth: int = MAX_DEPTH) -> Expr:
    target = subterm_at(e, t.at)
    new = replace_at(e, t.at, rewrite(t.rule, t.direction, target))
    if depth(new) > max_depth:
        raise DepthError(f"rewrite would exceed depth {max_depth}")
    return new


@dataclass(frozen=True)
class ProofScript:
    tactics: tuple[Tactic, ...] = ()

    def __len__(self) -> int:
        return len(self.tactics)

    def __iter__(self):
        return iter(self.tactics)

    def __getitem__(self, i):
        return self.tactics[i]

    def render(self) -> str:
        return "\n".join(t.render() for t in self.tactics)


_TACTIC_LINE = re.compile(r"^rw (<- )?(\S+) at (\S+)$")


def parse_script(text: str, max_tactics: int | None = None) -> ProofScript:
    """Parse one tactic per line; blank lines and ``--`` comments are skipped."""
    tactics = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("--"):
            continue
        m = _TACTIC_LINE.match(line)
        if m is None:
            raise ParseError(f"malformed tactic {line!r}", line=lineno)
        rev, name, where = m.groups()
        if name not in RULES:
            raise UnknownRule(name, line=lineno)
        try:
            path = parse_path(where)
        except ParseError:
            raise ParseError(f"bad path {where!r}", line=lineno) from None
        tactics.append(Tactic(name, "rev" if rev else "fwd", path))
    if max_tactics is not None and len(tactics) > max_tactics:
        raise ParseError(f"script has {len(tactics)} tactics, limit is {max_tactics}")
    return ProofScript(tuple(tactics))


def evaluate(e: Expr, env: dict[str, int]) -> int:
    """Polynomial value of ``e`` under a variable assignment."""
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Add):
        return evaluate(e[0], env) + evaluate(e[1], env)
    return evaluate(e[0], env) * evaluate(e[1], env)

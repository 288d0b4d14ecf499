"""Prompt templates for reflection and rewriting data.

Only the prompt text is produced here; nothing calls an external model.
Substitution is single-pass, so inserted code that happens to contain a
placeholder string is left alone.
"""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

REFLECTION = "reflection.txt"
REWRITE_STEP1 = "rewrite_step1.txt"
REWRITE_STEP2 = "rewrite_step2.txt"

PLACEHOLDERS = {
    REFLECTION: ("{old_code}", "{error}", "{new_code}"),
    REWRITE_STEP1: ("{problem}", "{solution}"),
    REWRITE_STEP2: ("{lean code1}", "{lean code2}"),
}


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files("rlpaf").joinpath("templates").joinpath(name).read_text(encoding="utf-8")


def fill(name: str, values: dict[str, str]) -> str:
    text = template(name)
    pattern = re.compile("|".join(re.escape(p) for p in PLACEHOLDERS[name]))
    return pattern.sub(lambda m: values[m.group(0)], text)


def render_reflection_prompt(old_code: str, error_text: str, new_code: str) -> str:
    return fill(REFLECTION, {"{old_code}": old_code, "{error}": error_text, "{new_code}": new_code})


def render_rewrite_prompts(problem: str, solution: str, code_wrong: str, code_right: str) -> tuple[str, str]:
    step1 = fill(REWRITE_STEP1, {"{problem}": problem, "{solution}": solution})
    step2 = fill(REWRITE_STEP2, {"{lean code1}": code_wrong, "{lean code2}": code_right})
    return step1, step2

import os

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from rlpaf import lang

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def exprs(max_depth: int = 4):
    leaves = st.one_of(
        st.sampled_from(lang.VARIABLES).map(lang.Var),
        st.integers(0, 4).map(lang.Const),
    )

    def grow(children):
        return st.one_of(
            st.tuples(children, children).map(lambda lr: lang.Add(*lr)),
            st.tuples(children, children).map(lambda lr: lang.Mul(*lr)),
        )

    # recursive() bounds leaves, not depth, so filter the rare deep tree
    return st.recursive(leaves, grow, max_leaves=2 ** (max_depth - 1)).filter(lambda e: lang.depth(e) <= max_depth)


@pytest.fixture(scope="session")
def small_corpus():
    from rlpaf import curation

    return curation.gen_statements(11, 40, 3, 3, min_scramble=1)


# ---------------------------------------------------------------------------
# acceptance reporting: one line per criterion at the end of the run
# ---------------------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

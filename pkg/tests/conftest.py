import numpy as np
import pytest
from hypothesis import strategies as st

from duet.corpus import Dataset, Interaction

ACCEPTANCE = {}


def random_corpus(rng: np.random.Generator, n_users=None, n_items=None, n=None, scale=(1, 5)) -> Dataset:
    n_users = n_users or int(rng.integers(1, 9))
    n_items = n_items or int(rng.integers(1, 9))
    n = n if n is not None else int(rng.integers(0, 40))
    seen, rows = set(), []
    for _ in range(n):
        u, i = int(rng.integers(n_users)), int(rng.integers(n_items))
        if (u, i) in seen:
            continue
        seen.add((u, i))
        rows.append(Interaction(f"u{u}", f"i{i}", int(rng.integers(scale[0], scale[1] + 1)),
                                int(rng.integers(0, 30)), f"text {u} {i}"))
    return Dataset(tuple(rows), scale, "random")


@st.composite
def corpora(draw, max_users=6, max_items=6, max_n=30):
    n_users = draw(st.integers(1, max_users))
    n_items = draw(st.integers(1, max_items))
    pairs = draw(st.lists(st.tuples(st.integers(0, n_users - 1), st.integers(0, n_items - 1)),
                          max_size=max_n, unique=True))
    ts = draw(st.lists(st.integers(0, 20), min_size=len(pairs), max_size=len(pairs)))
    ratings = draw(st.lists(st.integers(1, 5), min_size=len(pairs), max_size=len(pairs)))
    rows = tuple(Interaction(f"u{u}", f"i{i}", r, t) for (u, i), t, r in zip(pairs, ts, ratings))
    return Dataset(rows, (1, 5), "hyp")


@pytest.fixture
def record_criterion(request):
    """Register the outcome of an acceptance criterion for the summary lines."""
    def record(number: int, label: str):
        ACCEPTANCE[number] = {"label": label, "nodeid": request.node.nodeid}
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.get_closest_marker("criterion")
    if crit is None:
        return
    number, label = crit.args
    entry = ACCEPTANCE.setdefault(number, {"label": label, "passed": True, "seconds": 0.0})
    if rep.when == "call":
        entry["seconds"] += rep.duration
    if rep.failed:
        entry["passed"] = False


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        e = ACCEPTANCE[number]
        status = "PASS" if e.get("passed", False) else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}  {e['label']}  ({e.get('seconds', 0.0):.2f}s)")

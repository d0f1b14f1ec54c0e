import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Gradient of scalar ``f`` at ``x`` by central differences (x is copied)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------
# Tests marked ``criterion(n, title)`` contribute one PASS/FAIL line each to a
# terminal summary; ``record_detail`` lets a test attach its measured numbers.

_CRITERIA = {}
_DETAILS = {}


@pytest.fixture
def record_detail(request):
    def record(text):
        _DETAILS.setdefault(request.node.nodeid, []).append(text)
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "nodes": []})
    if item.nodeid not in entry["nodes"]:
        entry["nodes"].append(item.nodeid)
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] else "FAIL"
        details = [d for n in entry["nodes"] for d in _DETAILS.get(n, [])]
        line = f"[{status}] criterion {number}: {entry['title']}"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)

import pytest

CRITERIA = {
    1: "oracle equivalence (exact engine vs dense Zha-Simon)",
    2: "variant equivalence (GKL/RPI engine vs dense oracles)",
    3: "SV-LCOV isometry",
    4: "SV-LCOV QR vs dense MGS",
    5: "update-sparsity scaling",
    6: "speedup over dense baseline",
    7: "synthetic graph Norm/AP agreement",
    8: "extended-decomposition health",
    9: "query contract",
    10: "persistence round trip",
}

_results = {}


@pytest.fixture(scope="session")
def record():
    def _record(criterion, passed, detail=""):
        _results[criterion] = (bool(passed), detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    ran = [c for c in CRITERIA if c in _results]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for c in CRITERIA:
        if c not in _results:
            continue
        ok, detail = _results[c]
        terminalreporter.write_line(
            f"criterion {c:2d} {'PASS' if ok else 'FAIL'}: {CRITERIA[c]}  [{detail}]")

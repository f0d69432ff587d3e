import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion: ``criterion("C1", ok, detail)``.
    Returns ``ok`` so the caller can assert on it."""

    def record(name: str, ok: bool, detail: str) -> bool:
        _CRITERIA[name] = (bool(ok), detail)
        print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda k: int(k[1:])):
        ok, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{name:>3}: {'PASS' if ok else 'FAIL'}  {detail}")

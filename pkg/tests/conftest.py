import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_KEY] = {}


@pytest.fixture
def criterion(request):
    """record(number, title, ok, detail) stores one part of an acceptance criterion."""
    table = request.config.stash[_KEY]

    def record(number: int, title: str, ok: bool, detail: str = ""):
        entry = table.setdefault(number, {"title": title, "parts": []})
        entry["parts"].append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash.get(_KEY, {})
    if not table:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(table):
        entry = table[number]
        ok = all(p for p, _ in entry["parts"])
        detail = "; ".join(d for _, d in entry["parts"] if d)
        terminalreporter.write_line(f"{number:2d}. {'PASS' if ok else 'FAIL'}  {entry['title']}: {detail}")

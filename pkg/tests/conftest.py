import pytest

_verdicts = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_verdicts, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_verdicts, [])
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for v in sorted(verdicts, key=lambda v: v.number):
        terminalreporter.write_line(v.line())
    passed = sum(v.passed for v in verdicts)
    terminalreporter.write_line(f"{passed}/{len(verdicts)} criteria passed")

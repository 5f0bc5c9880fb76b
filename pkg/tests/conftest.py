"""Shared pytest hooks: print one labeled line per acceptance criterion."""

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_makereport(item, call):
    if call.when != "call" or "test_acceptance" not in item.nodeid:
        return
    label = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if call.excinfo is None:
        outcome = "PASS"
    elif call.excinfo.errisinstance(BaseException) and call.excinfo.typename == "Skipped":
        outcome = "SKIP"
    else:
        outcome = "FAIL"
    _CRITERIA[item.nodeid] = (label, outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _CRITERIA.values():
        terminalreporter.write_line(f"{outcome}  {label}")

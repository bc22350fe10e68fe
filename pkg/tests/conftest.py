"""Collects per-criterion outcomes of tests marked ``criterion`` and prints
one PASS/FAIL line per criterion at the end of the run."""

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            _OUTCOMES.setdefault(num, {"title": title, "tests": {}})
            item.user_properties.append(("criterion", num))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    tests = _OUTCOMES[props["criterion"]]["tests"]
    if report.when == "call" or report.failed:
        tests[report.nodeid] = tests.get(report.nodeid, True) and not report.failed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        entry = _OUTCOMES[num]
        results = entry["tests"].values()
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status}  {entry['title']} [tests: {len(entry['tests'])}]")

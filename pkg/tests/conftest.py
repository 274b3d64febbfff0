"""Prints a one-line verdict per acceptance criterion at the end of the run."""

_verdicts = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    failed = report.failed or _verdicts.get(key, ("PASS",))[0] == "FAIL"
    if report.when == "call" or report.failed:
        _verdicts[key] = ("FAIL" if failed else "PASS", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_verdicts):
        verdict, detail = _verdicts[key]
        terminalreporter.write_line(f"{verdict}  {key}  {detail}")

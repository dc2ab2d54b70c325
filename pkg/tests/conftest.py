from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_criteria = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        key = props["criterion"]
        if key in _criteria and _criteria[key][0] == "FAIL":
            return
        _criteria[key] = ("PASS" if report.passed else "FAIL", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda s: int(s.split()[0])):
        status, detail = _criteria[key]
        terminalreporter.write_line(f"{status}  criterion {key}: {detail}")

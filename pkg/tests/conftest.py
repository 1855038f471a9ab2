import re

CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_")


def pytest_terminal_summary(terminalreporter):
    verdict = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = CRITERION.search(getattr(rep, "nodeid", ""))
            if m is None or (key == "passed" and rep.when != "call"):
                continue
            n = int(m.group(1))
            verdict[n] = verdict.get(n, True) and key == "passed"
    if not verdict:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdict):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if verdict[n] else 'FAIL'}")

import re


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if getattr(report, "when", "call") not in ("call", None) and outcome != "error":
                continue
            match = re.search(r"test_criterion_(\d+)_(\w+)", nodeid)
            if not match:
                continue
            number = int(match.group(1))
            label = match.group(2).replace("_", " ")
            status = "PASS" if outcome == "passed" else "FAIL"
            # setup/teardown errors override a missing call phase
            if number not in results or status == "FAIL":
                results[number] = (label, status)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        label, status = results[number]
        terminalreporter.write_line(f"criterion {number} ({label}): {status}")

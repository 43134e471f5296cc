"""One summary line per acceptance criterion at the end of a run."""

import re

_STATUS_LABEL = {
    "passed": "PASS",
    "failed": "FAIL",
    "error": "FAIL (error)",
    "skipped": "SKIP",
    "xfailed": "FAIL (documented limitation)",
    "xpassed": "UNEXPECTED PASS",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = {}
    for status, label in _STATUS_LABEL.items():
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            m = re.search(r"test_criterion_(\d+)_(\w+)", nodeid)
            if not m:
                continue
            number, slug = m.group(1), m.group(2).replace("_", " ")
            detail = ""
            if status == "skipped" and rep.longrepr:
                reason = str(rep.longrepr[-1])
                detail = f" ({reason.removeprefix('Skipped: ')})"
            lines[int(number)] = f"criterion {number} {slug}: {label}{detail}"
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])

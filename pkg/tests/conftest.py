"""Prints one PASS/FAIL line per acceptance criterion at the end of a run."""

import re

_OUTCOMES: dict[str, dict] = {}
_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    entry = _OUTCOMES.setdefault(m.group(1), {"name": m.group(2), "ok": True, "ran": False, "notes": [], "secs": 0.0})
    if report.when == "call":
        entry["ran"] = True
        entry["secs"] += report.duration
        entry["notes"] = [f"{k}={v}" for k, v in report.user_properties]
    if report.failed:
        entry["ok"] = False
    if report.skipped:
        entry["ok"] = None


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_OUTCOMES, key=int):
        e = _OUTCOMES[key]
        status = "SKIP" if e["ok"] is None else ("PASS" if e["ok"] and e["ran"] else "FAIL")
        notes = f"  [{', '.join(e['notes'])}]" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {int(key):2d} {e['name']}: {status} ({e['secs']:.2f} s){notes}")

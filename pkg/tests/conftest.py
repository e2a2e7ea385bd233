"""Shared fixtures and the acceptance-criteria summary hook."""

import pytest

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    key = f"{number}. {name}"
    ACCEPTANCE_RESULTS[key] = (ok, detail)
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {key}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split(".")[0])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {key} -- {detail}")

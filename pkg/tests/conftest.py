"""Shared pytest hooks: the acceptance suite registers one verdict line per
requirement; reprint them at the end of the run so the pass/fail summary is
visible regardless of capture settings."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(module, "VERDICTS", [])
            break
    if not lines:
        return
    terminalreporter.section("acceptance verdicts")
    for line in lines:
        terminalreporter.write_line(line)

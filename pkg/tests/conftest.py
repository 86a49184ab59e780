import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Acceptance tests append their verdict lines here; printed after the run so
# pytest's capture cannot swallow them.
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(ACCEPTANCE_VERDICTS):
            terminalreporter.write_line(line)

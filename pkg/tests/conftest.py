import pytest

from imm.config import RunConfig

ACCEPTANCE_LINES = []


def tiny_run(**train) -> RunConfig:
    base = {"batch_size": 16, "particles": 4, "hidden": (16, 16), "time_embed_dim": 8, "steps": 5, "lr": 1e-3}
    base.update(train)
    return RunConfig().replace(train=base)


@pytest.fixture
def tiny():
    return tiny_run


@pytest.fixture
def acceptance(capsys):
    """Record and immediately show one pass/fail line per criterion."""

    def report(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

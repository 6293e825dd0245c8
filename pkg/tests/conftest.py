"""Collects acceptance verdicts and prints them at the end of the run."""

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def record(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), name, detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {name}: {detail}")

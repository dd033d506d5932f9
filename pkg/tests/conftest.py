"""Collects acceptance outcomes and prints one line per check after the run."""

_RESULTS: list[tuple[str, str, bool, str]] = []


def record(criterion: str, label: str, ok: bool, detail: str = "") -> None:
    _RESULTS.append((criterion, label, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {label} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, label, ok, detail in _RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {label} ({detail})")
    terminalreporter.write_line("")
    for criterion in sorted({r[0] for r in _RESULTS}, key=int):
        rows = [r for r in _RESULTS if r[0] == criterion]
        failed = [r[1] for r in rows if not r[2]]
        verdict = "PASS" if not failed else "FAIL"
        note = f"{len(rows)} checks" + (f"; failing: {', '.join(failed)}" if failed else "")
        terminalreporter.write_line(f"criterion {criterion}: {verdict} ({note})")

"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: list[tuple[int, str]] = []


def record(number: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}"
    if detail:
        line += f" ({detail})"
    LINES.append((number, line))
    print(line)

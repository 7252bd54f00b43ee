"""Shared store for acceptance result lines (printed again in the pytest summary)."""

LINES: list[str] = []


def report(num: int, ok: bool, what: str, measured: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {num:>2}: {what} | {measured}"
    LINES.append(line)
    print(line)
    return ok

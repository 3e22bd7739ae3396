"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number, title, passed, detail=""):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    LINES[number] = line
    print(line)
    return passed

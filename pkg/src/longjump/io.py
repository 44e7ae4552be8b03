"""CSV output with an optional ``# key=value`` metadata header."""

import csv
from typing import Iterable, Mapping


def _fmt(v):
    if hasattr(v, "item"):  # numpy scalar (np.float64 is also a float subclass)
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, columns: list[str], rows: Iterable, meta: Mapping | None = None) -> None:
    """Write ``rows`` under ``columns``; floats are written round-trip exact.

    Each ``meta`` item becomes a leading ``# key=value`` line.
    """
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """Inverse of :func:`write_csv`: ``(meta, columns, rows)`` with string cells."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        k, _, v = lines[i][2:].partition("=")
        meta[k] = v
        i += 1
    reader = csv.reader(lines[i:])
    columns = next(reader)
    return meta, columns, list(reader)

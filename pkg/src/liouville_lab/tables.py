"""CSV and JSON writers with round-trip-safe float formatting."""
from __future__ import annotations

import csv
import json


def fmt(v) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(v), ".17g")


def write_rows(path, header, rows) -> None:
    """Write rows; floats are formatted with :func:`fmt`, ints and strings as-is."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Versioned text tables.

Every file this package writes starts with a header line ``# snropt:<kind> v<N>``
followed by optional ``#`` comment lines and a CSV body whose first row holds
the column names.  Readers reject files of the wrong kind or an unknown version.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

FORMAT_VERSION = 1


class FileFormatError(ValueError):
    """Raised when a file is missing its header or carries an unknown version."""


def header_line(kind: str, version: int = FORMAT_VERSION) -> str:
    return f"# snropt:{kind} v{version}"


def write_table(path, kind: str, columns: Sequence[str], rows: Iterable[Sequence],
                comments: Sequence[str] = ()) -> None:
    path = Path(path)
    buf = io.StringIO()
    buf.write(header_line(kind) + "\n")
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def check_header(first_line: str, kind: str, source="<input>") -> int:
    prefix = "# snropt:"
    if not first_line.startswith(prefix):
        raise FileFormatError(f"{source}: missing '# snropt:{kind} v{FORMAT_VERSION}' header")
    try:
        found_kind, ver = first_line[len(prefix):].split()
        version = int(ver.lstrip("v"))
    except ValueError as exc:
        raise FileFormatError(f"{source}: malformed header {first_line!r}") from exc
    if found_kind != kind:
        raise FileFormatError(f"{source}: expected a {kind!r} file, found {found_kind!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{source}: unsupported {kind} version {version}")
    return version


def read_table(path, kind: str) -> tuple[list[str], list[list[str]]]:
    """Return ``(columns, rows)`` with every cell left as a string."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty file")
    check_header(lines[0], kind, source=str(path))
    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(body)
    try:
        columns = next(reader)
    except StopIteration:
        raise FileFormatError(f"{path}: no column header") from None
    columns = [c.strip() for c in columns]
    rows = [[c.strip() for c in row] for row in reader]
    return columns, rows

"""Newline-delimited JSON helpers shared by every file format in the package."""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable


class FormatError(ValueError):
    """A file parsed as JSON but does not match the expected record layout."""


def dumps_record(record: dict) -> str:
    # Compact and NaN-free so that write -> read -> write is byte-identical.
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def dumps_records(records: Iterable[dict]) -> str:
    return "".join(dumps_record(r) + "\n" for r in records)


def loads_records(text: str, source: str = "<string>") -> list[dict]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise FormatError(f"{source}:{lineno}: each line must be a JSON object")
        out.append(rec)
    return out


def read_records(path: str | Path) -> list[dict]:
    path = Path(path)
    return loads_records(path.read_text(encoding="utf-8"), source=str(path))


def write_text(path: str | Path | None, text: str, stdout: IO[str] | None = None) -> None:
    if path is None:
        assert stdout is not None
        stdout.write(text)
        return
    Path(path).write_text(text, encoding="utf-8")

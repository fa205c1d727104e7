"""Exception hierarchy shared across modules.

The CLI maps these onto exit codes, so every failure raised on bad user
input derives from :class:`InputError`.
"""

from __future__ import annotations


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class RecordError(InputError):
    """A single record in an input file failed validation."""

    def __init__(self, message: str, *, record: int | None = None, field: str | None = None):
        self.record = record
        self.field = field
        where = []
        if record is not None:
            where.append(f"record {record}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)

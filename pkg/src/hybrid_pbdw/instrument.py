"""Records the dense factorizations performed by the online solvers."""
from __future__ import annotations

import contextlib
import contextvars
from typing import Iterator, Optional

_log: contextvars.ContextVar[Optional[list]] = contextvars.ContextVar("factorizations", default=None)


def record(label: str, size: int) -> None:
    entries = _log.get()
    if entries is not None:
        entries.append((label, int(size)))


@contextlib.contextmanager
def factorization_log() -> Iterator[list]:
    """Collect ``(label, size)`` for every dense factorization made inside the block."""
    entries: list = []
    token = _log.set(entries)
    try:
        yield entries
    finally:
        _log.reset(token)

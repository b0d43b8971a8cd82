"""Shared plumbing: atomic file writes and worker-count resolution."""

from __future__ import annotations

import os
import tempfile

THREADS_ENV = "CONTACTFORGE_THREADS"


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write ``data`` to ``path`` via temp file + rename.

    Interrupted runs never leave a truncated file behind: the target either
    keeps its old content or gets the full new content.
    """
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def worker_count() -> int:
    """Worker cap from the CONTACTFORGE_THREADS env var (0 or unset = auto)."""
    raw = os.environ.get(THREADS_ENV, "0").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)

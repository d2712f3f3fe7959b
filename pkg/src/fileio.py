"""
Atomic file output helpers for SceneMix
"""

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterator


@contextmanager
def atomic_write(path: Path, mode: str = "wb", encoding: str | None = None) -> Iterator[IO]:
    """
    Write to a temporary file next to `path` and rename it into place.

    The target is never left half-written: on error the temporary file is
    removed and the previous content (if any) survives.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, encoding=encoding if "b" not in mode else None) as f:
            yield f
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_text_atomic(path: Path, text: str) -> None:
    """Atomically replace a UTF-8 text file."""
    with atomic_write(path, "w", encoding="utf-8") as f:
        f.write(text)


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Atomically replace a binary file."""
    with atomic_write(path, "wb") as f:
        f.write(data)

"""Atomic file replacement shared by every writer of derived artifacts."""
import os
import tempfile
from pathlib import Path


def atomic_write(path, data) -> None:
    """Write ``data`` (bytes or str) to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

"""
Atomic file writing helpers.

Reports and checkpoints are written to a temporary file in the destination
directory and then renamed over the target, so readers never see a partial file.
"""

import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path, data):
    """Write bytes to path via temp file + rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = None
    try:
        with tempfile.NamedTemporaryFile(
            mode="wb", delete=False, dir=path.parent, prefix=f".{path.name}.", suffix=".tmp"
        ) as tf:
            tf.write(data)
            tmp = tf.name
        os.replace(tmp, path)
        tmp = None
    finally:
        if tmp and os.path.exists(tmp):
            try:
                os.unlink(tmp)
            except OSError:
                pass
    return path


def atomic_write_text(path, text, encoding="utf-8"):
    """Write text to path via temp file + rename"""
    return atomic_write_bytes(path, text.encode(encoding))

"""Small file-output helpers."""

import os
import tempfile


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a same-directory temp file + rename.

    Interrupted runs therefore never leave a truncated output file.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

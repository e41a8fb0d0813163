"""Atomic file emission: write to a temporary sibling, then rename."""
import os
import tempfile


def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` so readers never see a partial file."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows, comments=()) -> str:
    """Render rows as CSV with round-trippable float formatting."""
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool,)):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    try:
        import numpy as np

        if isinstance(v, np.integer):
            return str(int(v))
    except ImportError:  # pragma: no cover
        pass
    f = float(v)
    if f != f:
        return "nan"
    return repr(f)

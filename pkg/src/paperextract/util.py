"""Small shared helpers."""

from __future__ import annotations

import os
import tempfile
import urllib.parse
from pathlib import Path


def collapse_ws(text: str) -> str:
    return " ".join(text.split())


def write_text_atomic(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def encode_doc_id(doc_id: str) -> str:
    """Percent-encode a DOI so it is safe as a filename."""
    return urllib.parse.quote(doc_id, safe="")

"""Small helpers shared across the simulator: settings lookup, atomic file output and parameter fingerprints."""
import hashlib
import os
import tempfile
from typing import Any

import numpy as np
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

from hop.core.constants import CSV_FLOAT_FORMAT


def get_setting(name: str, default: Any) -> Any:
    """Reads ``name`` from the Django settings, falling back to ``default`` when settings are not configured."""
    try:
        return getattr(settings, name, default)
    except ImproperlyConfigured:
        return default


def atomic_write_text(path: str, content: str) -> None:
    """Writes ``content`` to ``path`` through a temporary file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(content)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def params_digest(params: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(params).tobytes(), digest_size=8).hexdigest()


def format_float(value: float) -> str:
    return format(float(value), CSV_FLOAT_FORMAT)

"""Deterministic file writers.

numpy's savez stamps zip entries with the current time, which breaks the
byte-identical-rerun contract; this writer pins the entry metadata so the
same arrays always produce the same bytes.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
from numpy.lib import format as npformat


def write_npz_deterministic(path, arrays: dict) -> None:
    """npz-compatible archive with fixed entry order and timestamps."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            npformat.write_array(
                buf, np.ascontiguousarray(arrays[name]), allow_pickle=False
            )
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def write_json(path, obj) -> None:
    """Stable JSON: sorted keys, fixed float formatting via repr."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Self-describing named-array archives.

An archive is a single ``.npz`` file holding named float arrays plus a
UTF-8 JSON manifest stored under the reserved key ``__manifest__``.
Round-trips are bit-exact for float32/float64 payloads.  Used for feature
bundles, token-embedding tables and model checkpoints.
"""

import io
import json
import zipfile

import numpy as np

from .errors import ArchiveError

MANIFEST_KEY = "__manifest__"
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamp so outputs are byte-deterministic


def save_named_arrays(path, arrays, manifest=None):
    """Write ``arrays`` (name -> ndarray) and an optional manifest dict.

    The file is a plain ``.npz`` written with fixed zip metadata, so
    identical inputs produce byte-identical archives.
    """
    if MANIFEST_KEY in arrays:
        raise ArchiveError(f"array name {MANIFEST_KEY!r} is reserved")
    payload = dict(arrays)
    blob = json.dumps(manifest or {}, sort_keys=True).encode("utf-8")
    payload[MANIFEST_KEY] = np.frombuffer(blob, dtype=np.uint8)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(payload):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(payload[name]))
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())


def load_named_arrays(path, required=None):
    """Load an archive, returning ``(arrays, manifest)``.

    ``required`` may list array names that must be present; a missing name
    raises an ArchiveError naming it.
    """
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except (OSError, zipfile.BadZipFile, ValueError) as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from exc

    raw = data.pop(MANIFEST_KEY, None)
    if raw is None:
        raise ArchiveError(f"archive {path} has no manifest")
    try:
        manifest = json.loads(raw.tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"archive {path} has a corrupt manifest: {exc}") from exc

    for name in required or ():
        if name not in data:
            raise ArchiveError(f"archive {path} is missing array {name!r}")
    return data, manifest

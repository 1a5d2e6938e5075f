"""Versioned binary container: a diff-able text header plus named arrays.

Layout: one magic line, one JSON header line (UTF-8), then the raw array
payload. The header records the container kind, arbitrary metadata, and
the name/shape of every array in payload order; arrays are stored as
little-endian float32, concatenated back to back. Checkpoints and dataset
caches share this format.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"activeshot-container v1\n"
PAYLOAD_DTYPE = "<f4"


def save_container(
    path: str | Path,
    kind: str,
    meta: dict,
    arrays: dict[str, np.ndarray],
) -> None:
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays.items()],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype=PAYLOAD_DTYPE).tobytes())


def load_container(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise FormatError(f"{path}: not a container file (bad magic)")
            header_line = fh.readline()
            if not header_line.endswith(b"\n"):
                raise FormatError(f"{path}: truncated header")
            try:
                header = json.loads(header_line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}: corrupt header") from exc
            payload = fh.read()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read container: {exc}") from exc

    itemsize = np.dtype(PAYLOAD_DTYPE).itemsize
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: truncated payload at array '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=PAYLOAD_DTYPE).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes after payload")
    return header.get("kind", ""), header.get("meta", {}), arrays

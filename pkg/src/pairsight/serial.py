"""Binary containers and delimited outputs.

Matrix, frame-set, and checkpoint files share one layout: a single JSON
header line (utf-8, newline-terminated) followed by raw little-endian
row-major payload bytes. CSV and JSON report files embed the config hash
and seed for provenance.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionError
from .sensing import FrameSet

__all__ = [
    "config_hash",
    "save_matrix",
    "load_matrix",
    "save_frameset",
    "load_frameset",
    "save_checkpoint",
    "load_checkpoint",
    "write_csv",
    "write_json",
]

_DTYPES = {"float64": np.float64, "complex128": np.complex128, "int64": np.int64}


def config_hash(config: dict) -> str:
    """Stable sha256 of a JSON-serializable configuration."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_container(path, header: dict, payload: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def _read_container(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        return header, fh.read()


def _dtype_name(arr: np.ndarray) -> str:
    name = arr.dtype.name
    if name not in _DTYPES:
        raise DimensionError(f"unsupported dtype {name}; use {sorted(_DTYPES)}")
    return name


def save_matrix(path, array: np.ndarray, kind: str = "matrix",
                extra: dict | None = None) -> None:
    array = np.ascontiguousarray(array)
    header = {"kind": kind, "shape": list(array.shape),
              "dtype": _dtype_name(array), "layout": "row-major"}
    if array.ndim == 2 and array.shape[0] == array.shape[1]:
        header["n"] = array.shape[0]
    header.update(extra or {})
    _write_container(path, header, array.tobytes())


def load_matrix(path) -> tuple[np.ndarray, dict]:
    header, payload = _read_container(path)
    arr = np.frombuffer(payload, dtype=_DTYPES[header["dtype"]])
    return arr.reshape(header["shape"]).copy(), header


def save_frameset(path, frames: FrameSet, seed=None,
                  extra: dict | None = None) -> None:
    data = np.ascontiguousarray(frames.data)
    header = {"kind": "frame_set", "n": frames.n, "S": len(frames),
              "dtype": _dtype_name(data), "layout": "row-major", "seed": seed}
    header.update(extra or {})
    _write_container(path, header, data.tobytes())


def load_frameset(path) -> tuple[FrameSet, dict]:
    header, payload = _read_container(path)
    if header.get("kind") != "frame_set":
        raise DimensionError(f"{path} is not a frame-set container")
    arr = np.frombuffer(payload, dtype=_DTYPES[header["dtype"]])
    data = arr.reshape(header["S"], header["n"], header["n"]).copy()
    return FrameSet(data), header


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict,
                    rng_state: dict | None = None) -> None:
    """Parameter container: named float64 blocks after a JSON header."""
    names = sorted(arrays)
    shapes = {k: list(np.asarray(arrays[k]).shape) for k in names}
    header = {"kind": "checkpoint", "version": 1, "shapes": shapes,
              "rng_state": rng_state, "meta": meta}
    payload = b"".join(
        np.ascontiguousarray(arrays[k], dtype=np.float64).tobytes()
        for k in names)
    _write_container(path, header, payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    header, payload = _read_container(path)
    if header.get("kind") != "checkpoint" or header.get("version") != 1:
        raise CheckpointError(f"{path} is not a version-1 checkpoint")
    arrays = {}
    offset = 0
    for name in sorted(header["shapes"]):
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(payload, dtype=np.float64, count=count,
                              offset=offset)
        arrays[name] = block.reshape(shape).copy()
        offset += count * 8
    if offset != len(payload):
        raise CheckpointError("checkpoint payload length mismatch")
    return arrays, header


def write_csv(path, rows: list[dict], fieldnames: list[str],
              provenance: dict | None = None) -> None:
    """CSV with '# key=value' provenance comment lines before the header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key in sorted(provenance or {}):
        buf.write(f"# {key}={provenance[key]}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _format_cell(row.get(k)) for k in fieldnames})
    Path(path).write_text(buf.getvalue())


def _format_cell(v):
    if isinstance(v, float):
        return repr(v)  # shortest round-trip representation
    return v


def read_csv(path) -> tuple[list[dict], dict]:
    provenance = {}
    body = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# ") and "=" in line:
            key, _, value = line[2:].partition("=")
            provenance[key] = value
        else:
            body.append(line)
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    return rows, provenance


def write_json(path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

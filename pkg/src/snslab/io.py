"""On-disk formats: CSV tables, binary snapshot and density streams, run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
LITTLE_ENDIAN_TAG = 1
_HEADER = struct.Struct("<4sHBxII")  # magic, version, endian tag, pad, cutoff, mode count
_DENS_HEADER = struct.Struct("<4sHBxI")  # magic, version, endian tag, pad, dimension


class FormatError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (np.bool_, bool)):
        return "true" if v else "false"
    return str(v)


def csv_text(columns, rows) -> str:
    """RFC-4180 text; ``columns`` carry units as ``name[unit]``, floats use ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    _atomic_write(path, csv_text(columns, rows).encode())
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# snapshots -----------------------------------------------------------------------

def snapshot_bytes(cutoff: int, times, states, traj_index=None) -> bytes:
    """Header then one ``float64`` record ``[trajectory, t, coeffs...]`` per snapshot.

    ``states`` has shape ``(n_traj, n_times, M)`` or ``(n_times, M)``.
    """
    S = np.asarray(states, dtype=float)
    if S.ndim == 2:
        S = S[None]
    n_traj, n_t, M = S.shape
    times = np.asarray(times, dtype=float)
    if len(times) != n_t:
        raise ValueError("times and states disagree")
    idx = np.arange(n_traj) if traj_index is None else np.asarray(traj_index)
    rec = np.empty((n_traj, n_t, M + 2), dtype="<f8")
    rec[:, :, 0] = idx[:, None]
    rec[:, :, 1] = times[None, :]
    rec[:, :, 2:] = S
    return _HEADER.pack(b"SNSL", FORMAT_VERSION, LITTLE_ENDIAN_TAG, int(cutoff), M) + rec.tobytes()


def write_snapshots(path, cutoff: int, times, states, traj_index=None) -> Path:
    path = Path(path)
    _atomic_write(path, snapshot_bytes(cutoff, times, states, traj_index))
    return path


@dataclass
class SnapshotFile:
    cutoff: int
    n_modes: int
    traj_index: np.ndarray
    times: np.ndarray
    coeffs: np.ndarray


def read_snapshots(path) -> SnapshotFile:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, endian, cutoff, M = _HEADER.unpack_from(data)
    if magic != b"SNSL":
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION or endian != LITTLE_ENDIAN_TAG:
        raise FormatError(f"unsupported version {version} / endian tag {endian}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size % (M + 2):
        raise FormatError("record stream is not a whole number of records")
    rec = body.reshape(-1, M + 2)
    return SnapshotFile(cutoff, M, rec[:, 0].astype(int), rec[:, 1].copy(), rec[:, 2:].copy())


def density_bytes(density) -> bytes:
    d = density.d
    head = _DENS_HEADER.pack(b"DENS", FORMAT_VERSION, LITTLE_ENDIAN_TAG, d)
    meta = np.concatenate([density.origin, density.spacing]).astype("<f8").tobytes()
    counts = np.asarray(density.counts, dtype="<u4").tobytes()
    return head + meta + counts + np.ascontiguousarray(density.values, dtype="<f8").tobytes()


def write_density(path, density) -> Path:
    path = Path(path)
    _atomic_write(path, density_bytes(density))
    return path


def read_density(path):
    from .besov import GriddedFunction

    data = Path(path).read_bytes()
    if len(data) < _DENS_HEADER.size:
        raise FormatError("truncated header")
    magic, version, endian, d = _DENS_HEADER.unpack_from(data)
    if magic != b"DENS":
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION or endian != LITTLE_ENDIAN_TAG:
        raise FormatError(f"unsupported version {version} / endian tag {endian}")
    off = _DENS_HEADER.size
    meta = np.frombuffer(data, "<f8", 2 * d, off)
    off += 16 * d
    counts = tuple(int(c) for c in np.frombuffer(data, "<u4", d, off))
    off += 4 * d
    if len(data) != off + 8 * int(np.prod(counts)):
        raise FormatError("value block does not match the grid counts")
    vals = np.frombuffer(data, "<f8", int(np.prod(counts)), off).reshape(counts)
    return GriddedFunction(meta[:d].copy(), meta[d:].copy(), vals.copy())


# manifest --------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, *, config_hash: str, version: str, wall_clock: float, failures,
                   command: list[str], status: str, complete: bool, extra: dict | None = None) -> Path:
    """Inventory of every other file in ``out_dir`` with checksums, written atomically."""
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.iterdir() if p.is_file() and p.name != "manifest.json"
                   and not p.name.startswith("."))
    doc = {
        "config_hash": config_hash,
        "version": version,
        "wall_clock_seconds": round(float(wall_clock), 3),
        "status": status,
        "complete": bool(complete),
        "failed_trajectories": [int(i) for i in failures],
        "command": command,
        "files": {p.name: sha256_file(p) for p in files},
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    _atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    return path

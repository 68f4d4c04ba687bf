"""Trajectory files (SPD1) and CSV result tables."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .simulator import GridSpec, Trajectory

MAGIC = b"SPD1"
VERSION = 1
_HEADER = struct.Struct("<4sIQQddddQ")


class TrajectoryFileError(ValueError):
    code = "BAD_FILE"


class BadMagic(TrajectoryFileError):
    code = "BAD_MAGIC"


class VersionUnsupported(TrajectoryFileError):
    code = "VERSION_UNSUPPORTED"


class TruncatedFile(TrajectoryFileError):
    code = "TRUNCATED_FILE"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (file ends at byte offset {offset})")
        self.offset = offset


def write_trajectory(path, traj: Trajectory) -> None:
    g = traj.grid
    header = _HEADER.pack(MAGIC, VERSION, g.M, g.N, g.l, g.T, traj.nu, traj.alpha, traj.seed)
    values = np.ascontiguousarray(traj.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def read_trajectory(path) -> Trajectory:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{path}: not an SPD1 trajectory file (magic {data[:4]!r})")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: header needs {_HEADER.size} bytes", len(data))
    _, version, M, N, l, T, nu, alpha, seed = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionUnsupported(f"{path}: format version {version} is not supported")
    expected = _HEADER.size + 8 * (N + 1) * (M + 1)
    if len(data) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes for M={M}, N={N}", len(data))
    values = np.frombuffer(data, dtype="<f8", count=(N + 1) * (M + 1), offset=_HEADER.size)
    values = values.reshape(N + 1, M + 1).astype(float)
    return Trajectory(GridSpec(M, N, T, l), values, seed, nu, alpha)


def fmt(value) -> str:
    """Round-trip exact text for numbers; integers and strings verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, columns, rows, header: dict | None = None) -> None:
    """Write rows (dicts or sequences) with ``# key=value`` header comments."""
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={fmt(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in columns]
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[dict, list[dict]]:
    """Header comments and data rows of a file written by ``write_csv``."""
    header = {}
    lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    return header, list(csv.DictReader(lines))

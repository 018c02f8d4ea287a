"""Snapshots, phase maps, orientation files and CSV outputs."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class FormatError(ValueError):
    pass


# -- snapshots ------------------------------------------------------------
# Raw little-endian float64, row-major voxels with components interleaved,
# i.e. the array (*dims, ncomp); a sidecar ``.hdr`` text file carries
# dims, lengths, time, step and field name.

def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".hdr")


def write_snapshot(path, field: np.ndarray, lengths: Sequence[float], t: float, step: int,
                   name: str) -> Path:
    """Write a ``(ncomp, *dims)`` field; returns the data path."""
    path = Path(path)
    field = np.asarray(field, float)
    ncomp, dims = field.shape[0], field.shape[1:]
    data = np.ascontiguousarray(np.moveaxis(field, 0, -1), "<f8")
    path.write_bytes(data.tobytes())
    lines = [
        f"field {name}",
        "dims " + " ".join(str(n) for n in dims),
        f"ncomp {ncomp}",
        "lengths " + " ".join(repr(float(x)) for x in lengths),
        f"time {float(t)!r}",
        f"step {int(step)}",
        "dtype <f8",
        "order row-major, components interleaved",
    ]
    _header_path(path).write_text("\n".join(lines) + "\n")
    return path


def read_snapshot_header(path) -> dict:
    hdr = _header_path(Path(path))
    if not hdr.exists():
        raise FormatError(f"missing header {hdr}")
    out: dict = {}
    for line in hdr.read_text().splitlines():
        if not line.strip():
            continue
        key, _, val = line.partition(" ")
        out[key] = val.strip()
    try:
        return {
            "field": out["field"],
            "dims": tuple(int(x) for x in out["dims"].split()),
            "ncomp": int(out["ncomp"]),
            "lengths": tuple(float(x) for x in out["lengths"].split()),
            "time": float(out["time"]),
            "step": int(out["step"]),
        }
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{hdr}: malformed header ({exc})") from exc


def read_snapshot(path, expected_dims: Sequence[int] | None = None) -> tuple[np.ndarray, dict]:
    """Returns the ``(ncomp, *dims)`` field and the parsed header."""
    path = Path(path)
    meta = read_snapshot_header(path)
    dims, ncomp = meta["dims"], meta["ncomp"]
    if expected_dims is not None and tuple(expected_dims) != dims:
        raise FormatError(f"{path}: header dims {dims} do not match expected {tuple(expected_dims)}")
    raw = path.read_bytes()
    n = int(np.prod(dims)) * ncomp
    if len(raw) != 8 * n:
        raise FormatError(f"{path}: {len(raw)} bytes, header implies {8 * n}")
    arr = np.frombuffer(raw, "<f8").reshape(tuple(dims) + (ncomp,))
    return np.moveaxis(arr, -1, 0).astype(float), meta


# -- phase maps -------------------------------------------------------------
# Header line ``N1 N2 N3 L1 L2 L3`` followed by phase indices with the first
# index varying fastest. ``.txt`` files hold whitespace-separated integers;
# any other suffix means raw little-endian int32 after a text header line.

def write_phase_map(path, phase: np.ndarray, lengths: Sequence[float]) -> None:
    path = Path(path)
    phase = np.asarray(phase, np.int32)
    head = " ".join(str(n) for n in phase.shape) + " " + " ".join(repr(float(x)) for x in lengths)
    flat = phase.ravel(order="F")
    if path.suffix == ".txt":
        path.write_text(head + "\n" + " ".join(map(str, flat.tolist())) + "\n")
    else:
        path.write_bytes(head.encode() + b"\n" + flat.astype("<i4").tobytes())


def read_phase_map(path) -> tuple[np.ndarray, tuple[float, ...]]:
    path = Path(path)
    raw = path.read_bytes()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise FormatError(f"{path}: missing header line")
    tok = head.decode().split()
    if len(tok) % 2 or not tok:
        raise FormatError(f"{path}: header must be 'N1 .. Nd L1 .. Ld'")
    d = len(tok) // 2
    try:
        dims = tuple(int(x) for x in tok[:d])
        lengths = tuple(float(x) for x in tok[d:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header ({exc})") from exc
    n = int(np.prod(dims))
    if path.suffix == ".txt":
        vals = np.array(body.split(), dtype=np.int64)
    else:
        if len(body) != 4 * n:
            raise FormatError(f"{path}: expected {4 * n} payload bytes, got {len(body)}")
        vals = np.frombuffer(body, "<i4")
    if vals.size != n:
        raise FormatError(f"{path}: {vals.size} phase indices, header implies {n}")
    if vals.min() < 0:
        raise FormatError(f"{path}: negative phase index")
    return vals.reshape(dims, order="F").astype(np.int32), lengths


# -- orientations ---------------------------------------------------------

def write_orientations(path, quaternions: np.ndarray) -> None:
    """One ``x y z w`` unit quaternion per line, one line per grain."""
    np.savetxt(path, np.asarray(quaternions, float), fmt="%.17g")


def read_orientations(path) -> np.ndarray:
    q = np.atleast_2d(np.loadtxt(path, dtype=float))
    if q.shape[1] != 4:
        raise FormatError(f"{path}: expected 4 columns (x y z w)")
    norms = np.linalg.norm(q, axis=1)
    if np.any(np.abs(norms - 1) > 1e-6):
        raise FormatError(f"{path}: quaternions must have unit norm")
    return q


# -- CSV outputs ------------------------------------------------------------

class ProbeWriter:
    """Appends ``step,t,x,y,z,ux,uy,uz`` rows for a fixed set of voxels."""

    def __init__(self, path, voxels: Sequence[Sequence[int]], coords: np.ndarray):
        self.path = Path(path)
        self.voxels = [tuple(int(i) for i in v) for v in voxels]
        self.coords = np.asarray(coords, float)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(["step", "t", "x", "y", "z", "ux", "uy", "uz"])

    def write(self, step: int, t: float, u: np.ndarray) -> None:
        for v, x in zip(self.voxels, self.coords):
            vals = u[(slice(None),) + v]
            xyz = list(x) + [0.0] * (3 - len(x))
            comps = list(vals) + [0.0] * (3 - len(vals))
            self._w.writerow([step, repr(float(t))] + [repr(float(c)) for c in xyz + comps])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_probes(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


class ForceWriter:
    """Force history on the manifold: ``step,t,point,Fx[,Fy,Fz]`` rows."""

    def __init__(self, path, ncomp: int):
        self.path = Path(path)
        self.ncomp = ncomp
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(["step", "t", "point"] + ["Fx", "Fy", "Fz"][:ncomp])

    def write(self, step: int, t: float, F: np.ndarray | None) -> None:
        if F is None:
            return
        for p, row in enumerate(np.asarray(F).reshape(-1, self.ncomp)):
            self._w.writerow([step, repr(float(t)), p] + [repr(float(x)) for x in row])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)

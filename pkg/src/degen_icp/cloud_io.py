"""Dependency-free interchange formats: ASCII PLY and CSV clouds, whitespace
pose matrices, and JSON-lines records.

All writers are deterministic: fixed field order, '.' decimal separator,
no timestamps.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "write_ply",
    "read_ply",
    "write_csv",
    "read_csv",
    "write_pose",
    "read_pose",
    "write_matrix",
    "read_matrix",
    "write_jsonl",
    "read_jsonl",
    "write_json",
]

Array = NDArray[np.float64]

_FLOAT_FMT = "{:.10g}"


def _fmt_row(row) -> str:
    return " ".join(_FLOAT_FMT.format(float(v)) for v in row)


def write_ply(path, points, normals=None) -> None:
    """ASCII PLY with double x y z and optional nx ny nz."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {pts.shape[0]}"]
    lines += [f"property double {c}" for c in "xyz"]
    data = pts
    if normals is not None:
        nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if nrm.shape[0] != pts.shape[0]:
            raise ValueError(f"{path}: normals count {nrm.shape[0]} != points count {pts.shape[0]}")
        lines += [f"property double n{c}" for c in "xyz"]
        data = np.hstack([pts, nrm])
    lines.append("end_header")
    lines += [_fmt_row(r) for r in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[Array, Array | None]:
    """Read an ASCII PLY written by write_ply (or compatible).

    Returns (points, normals or None).
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    props: list[str] = []
    count = None
    body_start = None
    for i, line in enumerate(text[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise ValueError(f"{path}: unsupported element {tok[1]!r}")
            count = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[2])
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if count is None or body_start is None:
        raise ValueError(f"{path}: malformed PLY header")
    expected = ["x", "y", "z"]
    has_normals = props[:6] == expected + ["nx", "ny", "nz"]
    if props[:3] != expected or (len(props) > 3 and not has_normals):
        raise ValueError(f"{path}: unsupported property layout {props}")
    rows = [list(map(float, text[body_start + j].split())) for j in range(count)]
    data = np.asarray(rows, dtype=np.float64).reshape(count, len(props))
    points = data[:, :3]
    normals = data[:, 3:6] if has_normals else None
    return points, normals


def write_csv(path, points, normals=None) -> None:
    """CSV cloud with header, '.' decimal, no locale."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = "x,y,z"
    data = pts
    if normals is not None:
        nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        header += ",nx,ny,nz"
        data = np.hstack([pts, nrm])
    lines = [header] + [",".join(_FLOAT_FMT.format(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[Array, Array | None]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: expected header starting with x,y,z, got {header}")
    rows = [list(map(float, line.split(","))) for line in lines[1:] if line.strip()]
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    normals = data[:, 3:6] if header[3:6] == ["nx", "ny", "nz"] else None
    return data[:, :3], normals


def load_cloud(path) -> tuple[Array, Array | None]:
    """Dispatch on extension: .ply or .csv."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".csv":
        return read_csv(path)
    raise ValueError(f"{path}: unsupported cloud format {suffix!r}")


def write_pose(path, matrix) -> None:
    """Row-major homogeneous 4x4 pose, 16 whitespace-separated numbers."""
    m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
    Path(path).write_text("\n".join(_fmt_row(r) for r in m) + "\n")


def read_pose(path) -> Array:
    vals = [float(v) for v in Path(path).read_text().split()]
    if len(vals) != 16:
        raise ValueError(f"{path}: expected 16 numbers, got {len(vals)}")
    return np.asarray(vals, dtype=np.float64).reshape(4, 4)


def write_matrix(path, matrix) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    Path(path).write_text("\n".join(_fmt_row(r) for r in np.atleast_2d(m)) + "\n")


def read_matrix(path) -> Array:
    rows = [
        [float(v) for v in line.split()]
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
    return np.asarray(rows, dtype=np.float64)


def write_jsonl(path, records) -> None:
    """One compact JSON record per line."""
    lines = [json.dumps(rec, sort_keys=True) for rec in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_json(path, record) -> None:
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")

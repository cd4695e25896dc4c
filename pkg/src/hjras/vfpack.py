"""VFPACK container: value-function snapshot stacks on disk.

Layout: the ASCII magic line ``VFPACK 1 <header_bytes>`` followed by a
JSON header of exactly ``header_bytes`` bytes, then the raw snapshot
arrays in time order (float64, little-endian, row-major). Round-trips
are bit-exact.
"""

import json
import math
import os
import tempfile

import numpy as np

from .grids import Grid
from .solver import ValueSnapshots

MAGIC = b"VFPACK 1"
_DTYPE = "<f8"


def _grid_to_header(grid: Grid) -> dict:
    return {
        "lo": grid.lo.tolist(),
        "hi": grid.hi.tolist(),
        "counts": grid.counts.tolist(),
        "periodic": grid.periodic.astype(bool).tolist(),
    }


def _grid_from_header(h: dict) -> Grid:
    return Grid(
        np.asarray(h["lo"], dtype=float),
        np.asarray(h["hi"], dtype=float),
        np.asarray(h["counts"], dtype=np.int64),
        np.asarray(h["periodic"], dtype=bool),
    )


def atomic_write(path: str, data: bytes) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-vfpack-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pack(path: str, snaps: ValueSnapshots, meta: dict | None = None) -> None:
    header = {
        "format_version": 1,
        "kind": snaps.kind,
        "grid": _grid_to_header(snaps.grid),
        "times": [float(t) for t in snaps.times],
        "dtype": _DTYPE,
        "order": "C",
        "gamma": snaps.gamma,
        "a_offset": snaps.a_offset,
        "v_cap": None if math.isinf(snaps.v_cap) else snaps.v_cap,
        "converged": snaps.converged,
        "meta": meta or {},
    }
    header_bytes = (json.dumps(header, sort_keys=True) + "\n").encode("ascii")
    payload = np.ascontiguousarray(snaps.stack, dtype=_DTYPE).tobytes()
    blob = MAGIC + b" %d\n" % len(header_bytes) + header_bytes + payload
    atomic_write(path, blob)


def load_pack(path: str) -> tuple[ValueSnapshots, dict]:
    with open(path, "rb") as fh:
        magic_line = fh.readline()
        parts = magic_line.split()
        if parts[:2] != MAGIC.split() or len(parts) != 3:
            raise ValueError(f"{path}: not a VFPACK file")
        header_len = int(parts[2])
        header = json.loads(fh.read(header_len).decode("ascii"))
        payload = fh.read()
    grid = _grid_from_header(header["grid"])
    times = np.asarray(header["times"], dtype=float)
    expected = 8 * grid.num_nodes * len(times)
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    stack = np.frombuffer(payload, dtype=_DTYPE).reshape(len(times), grid.num_nodes).copy()
    v_cap = header.get("v_cap")
    snaps = ValueSnapshots(
        grid=grid,
        kind=header["kind"],
        times=times,
        stack=stack,
        gamma=float(header.get("gamma", 0.0)),
        a_offset=float(header.get("a_offset", 0.0)),
        v_cap=math.inf if v_cap is None else float(v_cap),
        converged=header.get("converged"),
    )
    return snaps, header.get("meta", {})

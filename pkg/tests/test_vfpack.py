import math

import numpy as np
import pytest

from hjras.grids import Grid
from hjras.solver import ValueSnapshots
from hjras.vfpack import load_pack, save_pack


def make_snaps(rng, periodic=False):
    grid = Grid([-1.0, 0.0], [1.0, 2 * np.pi], [7, 9], [False, periodic])
    times = np.array([0.0, 0.25, 0.5])
    stack = rng.normal(size=(3, grid.num_nodes))
    return ValueSnapshots(
        grid=grid,
        kind="reach",
        times=times,
        stack=stack,
        gamma=0.25,
        a_offset=0.125,
        v_cap=17.5,
        converged=True,
    )


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    snaps = make_snaps(rng, periodic=True)
    path = tmp_path / "pack.vfpack"
    save_pack(str(path), snaps, meta={"role": "reach", "index": 0})
    loaded, meta = load_pack(str(path))
    assert meta == {"role": "reach", "index": 0}
    assert loaded.kind == snaps.kind
    assert np.array_equal(loaded.times, snaps.times)
    assert loaded.stack.tobytes() == snaps.stack.tobytes()  # bit-for-bit
    assert loaded.gamma == snaps.gamma
    assert loaded.a_offset == snaps.a_offset
    assert loaded.v_cap == snaps.v_cap
    assert loaded.converged is True
    assert loaded.grid.compatible_with(snaps.grid)
    # saving the loaded pack reproduces identical bytes
    path2 = tmp_path / "pack2.vfpack"
    save_pack(str(path2), loaded, meta=meta)
    assert path.read_bytes() == path2.read_bytes()


def test_infinite_cap_round_trips(tmp_path):
    rng = np.random.default_rng(1)
    snaps = make_snaps(rng)
    snaps.v_cap = math.inf
    path = tmp_path / "pack.vfpack"
    save_pack(str(path), snaps)
    loaded, _ = load_pack(str(path))
    assert math.isinf(loaded.v_cap)


def test_header_declares_byte_length(tmp_path):
    rng = np.random.default_rng(2)
    snaps = make_snaps(rng)
    path = tmp_path / "pack.vfpack"
    save_pack(str(path), snaps)
    raw = path.read_bytes()
    magic, rest = raw.split(b"\n", 1)
    assert magic.startswith(b"VFPACK 1 ")
    header_len = int(magic.split()[2])
    header = rest[:header_len]
    payload = rest[header_len:]
    assert header.endswith(b"\n")
    assert len(payload) == 8 * snaps.grid.num_nodes * 3


def test_corrupt_magic_rejected(tmp_path):
    path = tmp_path / "bad.vfpack"
    path.write_bytes(b"NOTAPACK 9 4\nxxxx")
    with pytest.raises(ValueError, match="not a VFPACK"):
        load_pack(str(path))


def test_truncated_payload_rejected(tmp_path):
    rng = np.random.default_rng(3)
    snaps = make_snaps(rng)
    path = tmp_path / "pack.vfpack"
    save_pack(str(path), snaps)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="payload"):
        load_pack(str(path))

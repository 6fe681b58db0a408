import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import small_ops
from gradrom import io
from gradrom.errors import FormatError


def test_header_layout():
    buf = io.encode_matrix(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    assert buf[:4] == b"GRDM"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert int.from_bytes(buf[8:16], "little") == 3
    assert int.from_bytes(buf[16:24], "little") == 2
    # column-major payload
    assert np.array_equal(np.frombuffer(buf[24:], "<f8"), [1, 3, 5, 2, 4, 6])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 7), st.integers(0, 7)),
              elements=st.floats(allow_nan=False, width=64)))
def test_round_trip_exact(A):
    B = io.decode_matrix(io.encode_matrix(A))
    assert B.shape == A.shape and np.array_equal(B, A)


def test_round_trip_special_values(tmp_path):
    A = np.array([[np.nan, np.inf], [-0.0, 5e-324]])
    B = io.read_matrix(io.write_matrix(tmp_path / "m.grdm", A))
    assert A.tobytes() == B.tobytes()


def test_vector_is_one_column():
    assert io.decode_matrix(io.encode_matrix(np.arange(3.0))).shape == (3, 1)


def test_bad_magic_reports_offset_zero():
    buf = bytearray(io.encode_matrix(np.ones((2, 2))))
    buf[:4] = b"XXXX"
    with pytest.raises(FormatError) as exc:
        io.decode_matrix(bytes(buf))
    assert exc.value.offset == 0 and "offset 0" in str(exc.value)


def test_bad_version_reports_offset_four():
    buf = bytearray(io.encode_matrix(np.ones((2, 2))))
    buf[4] = 9
    with pytest.raises(FormatError) as exc:
        io.decode_matrix(bytes(buf))
    assert exc.value.offset == 4


def test_truncated_payload_reports_end_of_data():
    buf = io.encode_matrix(np.ones((3, 2)))[:-12]
    with pytest.raises(FormatError) as exc:
        io.decode_matrix(buf)
    assert exc.value.offset == len(buf)


def test_trailing_bytes_rejected():
    buf = io.encode_matrix(np.ones((2, 2))) + b"\0" * 8
    with pytest.raises(FormatError) as exc:
        io.decode_matrix(buf)
    assert exc.value.offset == 24 + 32


def test_truncated_header():
    with pytest.raises(FormatError) as exc:
        io.decode_matrix(b"GRDM\x01")
    assert exc.value.offset == 5


def test_read_matrix_names_file(tmp_path):
    p = tmp_path / "bad.grdm"
    p.write_bytes(b"nope" + bytes(20))
    with pytest.raises(FormatError, match="bad.grdm"):
        io.read_matrix(p)


def test_energy_csv(tmp_path):
    t = np.array([0.0, 0.01, 0.02])
    E = np.array([1.0 / 3.0, -2.5e-17, 12345.678901234567])
    p = io.write_energy_csv(tmp_path / "e.csv", t, E)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,energy"
    assert lines[1] == "0,0.33333333333333331"
    t2, E2 = io.read_energy_csv(p)
    assert np.array_equal(t2, t) and np.array_equal(E2, E)


def test_energy_csv_bad_header(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("time,E\n0,1\n")
    with pytest.raises(FormatError):
        io.read_energy_csv(p)


@pytest.mark.parametrize("q,cell,npc", [(1, "5", 3), (2, "22", 6)])
def test_vtk_structure(q, cell, npc):
    ops = small_ops(2, 4.0, q)
    sp = ops.space
    u = np.arange(ops.N, dtype=float)
    text = io.vtk_text(sp, {"u": u, "v": -u})
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == f"POINTS {ops.N} double"
    i = lines.index(f"CELLS {sp.n_K} {sp.n_K * (npc + 1)}")
    assert lines[i + 1].split()[0] == str(npc)
    j = lines.index(f"CELL_TYPES {sp.n_K}")
    assert set(lines[j + 1:j + 1 + sp.n_K]) == {cell}
    assert f"POINT_DATA {ops.N}" in lines
    k = lines.index("SCALARS v double 1")
    assert float(lines[k + 3]) == -1.0
    with pytest.raises(ValueError):
        io.vtk_text(sp, {"u": u[:-1]})


def test_json_numpy(tmp_path):
    p = io.write_json(tmp_path / "a.json", {"x": np.float64(1.5), "y": np.arange(3), "n": np.int64(2)})
    assert io.read_json(p) == {"x": 1.5, "y": [0, 1, 2], "n": 2}


def test_atomic_write_leaves_no_temporaries(tmp_path):
    io.atomic_write(tmp_path / "f.txt", "one")
    io.atomic_write(tmp_path / "f.txt", "two")
    assert (tmp_path / "f.txt").read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    io.atomic_write(tmp_path / "f.txt", "keep")
    with pytest.raises(TypeError):
        io.atomic_write(tmp_path / "f.txt", object())
    assert (tmp_path / "f.txt").read_text() == "keep"
    assert len(list(tmp_path.iterdir())) == 1


def test_atomic_write_respects_umask(tmp_path):
    import os
    old = os.umask(0o022)
    try:
        p = io.atomic_write(tmp_path / "f.txt", "x")
    finally:
        os.umask(old)
    assert (p.stat().st_mode & 0o777) == 0o644

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from elastowave.io import (FormatError, ForceWriter, ProbeWriter, read_orientations, read_phase_map,
                           read_probes, read_snapshot, read_snapshot_header, write_orientations,
                           write_phase_map, write_snapshot)

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(float, st.tuples(st.sampled_from([1, 3]), st.integers(1, 4), st.integers(1, 4),
                               st.integers(1, 5)), elements=finite))
def test_snapshot_roundtrip_bit_identical(tmp_path_factory, field):
    path = tmp_path_factory.mktemp("snap") / "u.bin"
    write_snapshot(path, field, (1.0, 2.0, 3.0), 1.25e-5, 7, "u")
    back, meta = read_snapshot(path, expected_dims=field.shape[1:])
    assert back.tobytes() == field.astype(float).tobytes()
    assert meta["time"] == 1.25e-5 and meta["step"] == 7 and meta["field"] == "u"


def test_snapshot_layout_components_interleaved(tmp_path):
    f = np.arange(12, dtype=float).reshape(3, 1, 2, 2)
    write_snapshot(tmp_path / "u.bin", f, (1, 1, 1), 0.0, 0, "u")
    raw = np.frombuffer((tmp_path / "u.bin").read_bytes(), "<f8")
    assert np.array_equal(raw[:3], f[:, 0, 0, 0])


def test_snapshot_errors(tmp_path):
    f = np.zeros((1, 4))
    write_snapshot(tmp_path / "u.bin", f, (1.0,), 0.0, 0, "u")
    with pytest.raises(FormatError):
        read_snapshot(tmp_path / "u.bin", expected_dims=(5,))
    (tmp_path / "u.bin").write_bytes(b"\0" * 8)
    with pytest.raises(FormatError):
        read_snapshot(tmp_path / "u.bin")
    with pytest.raises(FormatError):
        read_snapshot_header(tmp_path / "missing.bin")


@pytest.mark.parametrize("suffix", [".txt", ".raw"])
def test_phase_map_roundtrip(tmp_path, suffix):
    phase = np.random.default_rng(0).integers(0, 5, size=(3, 4, 5)).astype(np.int32)
    path = tmp_path / f"map{suffix}"
    write_phase_map(path, phase, (0.3, 0.4, 0.5))
    back, lengths = read_phase_map(path)
    assert np.array_equal(back, phase) and lengths == (0.3, 0.4, 0.5)


def test_phase_map_first_index_fastest(tmp_path):
    phase = np.array([[0, 1], [2, 3]], dtype=np.int32)
    write_phase_map(tmp_path / "m.txt", phase, (1.0, 1.0))
    assert (tmp_path / "m.txt").read_text().splitlines()[1].split() == ["0", "2", "1", "3"]


def test_phase_map_errors(tmp_path):
    (tmp_path / "a.txt").write_text("2 2 1.0 1.0\n0 1 2\n")
    with pytest.raises(FormatError):
        read_phase_map(tmp_path / "a.txt")
    (tmp_path / "b.txt").write_text("2 2 1.0\n0 1 2 3\n")
    with pytest.raises(FormatError):
        read_phase_map(tmp_path / "b.txt")
    (tmp_path / "c.txt").write_text("2 1.0\n0 -1\n")
    with pytest.raises(FormatError):
        read_phase_map(tmp_path / "c.txt")


def test_orientations(tmp_path):
    q = np.array([[0, 0, 0, 1.0], [0.5, 0.5, 0.5, 0.5]])
    write_orientations(tmp_path / "q.txt", q)
    assert np.array_equal(read_orientations(tmp_path / "q.txt"), q)
    np.savetxt(tmp_path / "bad.txt", [[1.0, 1.0, 0.0, 0.0]])
    with pytest.raises(FormatError):
        read_orientations(tmp_path / "bad.txt")


def test_probes_and_forces(tmp_path):
    u = np.random.default_rng(1).normal(size=(3, 2, 3, 4))
    with ProbeWriter(tmp_path / "p.csv", [(0, 1, 2), (1, 2, 3)], np.zeros((2, 3))) as pw:
        pw.write(5, 1e-6, u)
    rows = read_probes(tmp_path / "p.csv")
    assert rows[1]["step"] == 5
    assert [rows[1][k] for k in ("ux", "uy", "uz")] == list(u[:, 1, 2, 3])
    with ForceWriter(tmp_path / "f.csv", 3) as fw:
        fw.write(1, 0.0, None)
        fw.write(2, 1e-6, np.ones((4, 3)))
    assert len((tmp_path / "f.csv").read_text().splitlines()) == 5

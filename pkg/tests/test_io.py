import numpy as np
import pytest
from hypothesis import given, strategies as st

from calabiflow import io
from calabiflow import kahler as K
from calabiflow.grid import PeriodicGrid


def test_grid_roundtrip_scalar(tmp_path, rng):
    g = PeriodicGrid((8, 10), (1.0, 2.5))
    u = rng.standard_normal(g.shape)
    io.write_grid(tmp_path / "u.bin", g, u)
    g2, u2 = io.read_grid(tmp_path / "u.bin")
    assert g2 == g and np.array_equal(u, u2)


def test_header_and_layout(tmp_path):
    g = PeriodicGrid((8, 8))
    v = np.stack([np.zeros(g.shape), np.ones(g.shape)])
    io.write_grid(tmp_path / "v.bin", g, v)
    raw = (tmp_path / "v.bin").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b"2,8x8,1.0x1.0,2"
    data = np.frombuffer(payload, dtype="<f8")
    # components of one point are contiguous
    assert list(data[:4]) == [0.0, 1.0, 0.0, 1.0]


def test_rejects_mismatch(tmp_path):
    g = PeriodicGrid((8, 8))
    with pytest.raises(ValueError):
        io.write_grid(tmp_path / "x.bin", g, np.zeros((8, 9)))
    (tmp_path / "bad.bin").write_bytes(b"2,8x8,1.0x1.0,1\n" + b"\0" * 16)
    with pytest.raises(ValueError):
        io.read_grid(tmp_path / "bad.bin")
    (tmp_path / "bad2.bin").write_bytes(b"garbage\n")
    with pytest.raises(ValueError):
        io.read_grid(tmp_path / "bad2.bin")


@given(n=st.integers(1, 3), seed=st.integers(0, 100))
def test_hermitian_roundtrip(n, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, n, 8, 8)) + 1j * r.standard_normal((n, n, 8, 8))
    h = a + np.conj(np.swapaxes(a, 0, 1))
    packed = io.hermitian_to_real(h)
    assert packed.shape[0] == n * (n + 1)
    assert np.array_equal(io.real_to_hermitian(packed, n), h)


def test_hermitian_file(tmp_path):
    cg = K.ComplexTorusGrid(2, 8)
    g = K.flat_metric(cg)
    io.write_hermitian(tmp_path / "g.bin", cg.real, g)
    grid, g2 = io.read_hermitian(tmp_path / "g.bin")
    assert grid == cg.real and np.array_equal(g, g2)


def test_csv_and_report(tmp_path):
    io.write_csv(tmp_path / "a.csv", ("t", "x"), [(0.0, 1.5), (0.1, float("nan"))])
    cols, data = io.read_csv(tmp_path / "a.csv")
    assert cols == ["t", "x"] and data[0, 1] == 1.5 and np.isnan(data[1, 1])
    io.write_report(tmp_path / "r.txt", {"a": 1, "b": {"c": 0.5, "d": [1, 2]}, "e": True})
    rep = io.read_report(tmp_path / "r.txt")
    assert rep == {"a": "1", "b.c": "0.5", "b.d": "1, 2", "e": "true"}

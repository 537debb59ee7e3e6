import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cde import autoencoder as ae
from cde import data as io
from cde import density as dm


def test_swiss_roll_map_at_pi():
    np.testing.assert_allclose(io.swiss_roll_map(np.pi, 0.0), [-np.pi, 0.0, 0.0], atol=1e-12)


def test_fishbowl_points_on_unit_sphere_below_cap():
    X = io.gen_toy("fishbowl", 2000, seed=3).data
    np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-12)
    assert X[:, 2].max() <= np.cos(np.deg2rad(60.0)) + 1e-12


def test_fishbowl_is_uniform_by_area():
    # on a sphere, area is uniform in the height coordinate (Archimedes)
    z = io.gen_toy("fishbowl", 20000, seed=4, cap_angle=60).data[:, 2]
    hist, _ = np.histogram(z, bins=5, range=(-1.0, 0.5))
    assert hist.min() > 0.9 * hist.mean()


@pytest.mark.parametrize("kind", io.TOY_KINDS)
def test_gen_toy_shapes_and_determinism(kind):
    a = io.gen_toy(kind, 100, noise=0.1, seed=5).data
    b = io.gen_toy(kind, 100, noise=0.1, seed=5).data
    assert a.shape == (100, 3)
    np.testing.assert_array_equal(a, b)


def test_swiss_roll_geometry():
    X = io.gen_toy("swiss_roll", 500, seed=0).data
    t = np.hypot(X[:, 0], X[:, 2])
    assert t.min() >= 1.5 * np.pi - 1e-9 and t.max() <= 4.5 * np.pi + 1e-9
    assert 0 <= X[:, 1].min() and X[:, 1].max() <= 21


def test_gen_toy_validation():
    with pytest.raises(ValueError):
        io.gen_toy("torus", 10)
    with pytest.raises(ValueError):
        io.gen_toy("s_curve", 0)


# -- CSV --------------------------------------------------------------------

def test_load_two_rows(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,4\n")
    np.testing.assert_array_equal(io.load_csv(p).data, [[1, 2], [3, 4]])


def test_ragged_file_names_row(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(io.DataFormatError, match="row 2"):
        io.load_csv(p)


def test_header_skipped(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y\n1,2\n3,4\n")
    ds = io.load_csv(p)
    assert ds.header == ["x", "y"]
    np.testing.assert_array_equal(ds.data, [[1, 2], [3, 4]])


def test_bad_cells(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,abc\n")
    with pytest.raises(io.DataFormatError, match="row 2, column 2"):
        io.load_csv(p)
    p.write_text("1,2\n3,\n")
    with pytest.raises(io.DataFormatError, match="empty"):
        io.load_csv(p)
    assert np.isnan(io.load_csv(p, allow_missing=True).data[1, 1])


def test_labels(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b,label\n1,2,0\n3,4,1\n")
    ds = io.load_csv(p, has_labels=True)
    np.testing.assert_array_equal(ds.labels, [0, 1])
    assert ds.header == ["a", "b"]
    p.write_text("1,2,0.5\n")
    with pytest.raises(io.DataFormatError, match="integers"):
        io.load_csv(p, has_labels=True)


def test_write_csv_round_trip(tmp_path):
    X = np.random.default_rng(0).standard_normal((7, 3))
    X[2, 1] = np.nan
    p = tmp_path / "w.csv"
    io.write_csv(p, X, header=["a", "b", "c"])
    back = io.load_csv(p, allow_missing=True)
    np.testing.assert_array_equal(back.data, X)


def test_load_idx(tmp_path):
    imgs = np.arange(2 * 3 * 2, dtype=np.uint8).reshape(2, 3, 2)
    p = tmp_path / "x.idx"
    p.write_bytes(bytes([0, 0, 0x08, 3]) + struct.pack(">3I", 2, 3, 2) + imgs.tobytes())
    np.testing.assert_allclose(io.load_idx(p), imgs.reshape(2, -1) / 255.0)
    p.write_bytes(b"\x01\x02\x03")
    with pytest.raises(io.DataFormatError):
        io.load_idx(p)


# -- normalization and splitting ---------------------------------------------

def test_minmax_example():
    ds = io.minmax_fit_apply(io.Dataset(np.array([[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]])))
    np.testing.assert_array_equal(ds.data[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(ds.data[:, 1], 0.5)
    np.testing.assert_array_equal(io.minmax_invert(ds.data, ds.column_min, ds.column_max)[:, 1], 7.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_minmax_round_trip(M, N, seed):
    X = np.random.default_rng(seed).standard_normal((M, N)) * 100
    ds = io.minmax_fit_apply(io.Dataset(X))
    assert ds.data.min() >= 0 and ds.data.max() <= 1
    np.testing.assert_allclose(io.minmax_invert(ds.data, ds.column_min, ds.column_max), X, atol=1e-9)


def test_minmax_apply_clamps_and_keeps_nan():
    out = io.minmax_apply(io.Dataset(np.array([[-5.0, np.nan], [20.0, 1.0]])), [0.0, 0.0], [10.0, 2.0])
    np.testing.assert_array_equal(out.data[:, 0], [0.0, 1.0])
    assert np.isnan(out.data[0, 1]) and out.data[1, 1] == 0.5


def test_split_sizes():
    ds = io.Dataset(np.arange(10.0)[:, None])
    parts = io.split(ds, (0.8, 0.1, 0.1), seed=0)
    assert [p.data.shape[0] for p in parts] == [8, 1, 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 200), st.integers(0, 2**32 - 1))
def test_split_partitions_rows(M, seed):
    ds = io.Dataset(np.arange(float(M))[:, None], labels=np.arange(M))
    parts = io.split(ds, (0.6, 0.2, 0.2), seed=seed)
    rows = np.concatenate([p.data[:, 0] for p in parts])
    assert sorted(rows.tolist()) == list(range(M))
    for p in parts:
        np.testing.assert_array_equal(p.data[:, 0], p.labels)
    again = io.split(ds, (0.6, 0.2, 0.2), seed=seed)
    for a, b in zip(parts, again):
        np.testing.assert_array_equal(a.data, b.data)


def test_split_validation():
    ds = io.Dataset(np.arange(5.0)[:, None])
    with pytest.raises(ValueError):
        io.split(ds, (0.7, 0.7), seed=0)
    with pytest.raises(ValueError, match="empty"):
        io.split(ds, (0.9, 0.1), seed=0)


# -- model container --------------------------------------------------------

def make_model():
    enc, dec = ae.mirrored_specs(3, (5,), 2, "tanh")
    net = ae.init_params(enc, dec, seed=1)
    dens = dm.init_density(2, 3, 4, np.random.default_rng(2))
    return io.ModelFile(net, dens, np.array([0.0, -1.0, 2.0]), np.array([1.0, 1.0, 2.0]),
                        np.array([0.5, 0.4, 0.5]), {"mu": 0.1, "K": 3})


def test_model_round_trip_bitwise(tmp_path):
    mf = make_model()
    p = tmp_path / "m.cde"
    io.save_model(p, mf)
    back = io.load_model(p)
    for a, b in zip(mf.net.arrays(), back.net.arrays()):
        assert a.tobytes() == b.tobytes()
    assert [l.spec for l in back.net.layers] == [l.spec for l in mf.net.layers]
    for name in ("lam", "coef_re", "coef_im"):
        assert getattr(mf.dens, name).tobytes() == getattr(back.dens, name).tobytes()
    np.testing.assert_array_equal(back.column_min, mf.column_min)
    np.testing.assert_array_equal(back.train_mean, mf.train_mean)
    assert back.config == mf.config and back.net.margin == mf.net.margin


def test_truncated_model_fails_checksum(tmp_path):
    p = tmp_path / "m.cde"
    io.save_model(p, make_model())
    raw = p.read_bytes()
    p.write_bytes(raw[:-20])
    with pytest.raises(io.ModelFormatError, match="checksum"):
        io.load_model(p)
    p.write_bytes(raw[:10])
    with pytest.raises(io.ModelFormatError, match="checksum"):
        io.load_model(p)


def test_flipped_byte_fails_checksum(tmp_path):
    p = tmp_path / "m.cde"
    io.save_model(p, make_model())
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(io.ModelFormatError, match="checksum"):
        io.load_model(p)


def test_version_bump_is_reported(tmp_path):
    p = tmp_path / "m.cde"
    io.save_model(p, make_model())
    raw = bytearray(p.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    p.write_bytes(bytes(raw))
    with pytest.raises(io.ModelFormatError, match="version 2"):
        io.load_model(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "m.cde"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(io.ModelFormatError, match="magic"):
        io.load_model(p)

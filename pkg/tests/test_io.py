import numpy as np
import pytest

from evdecomp import io
from evdecomp.errors import InputError
from evdecomp.events import EventStream, Frame, FrameSequence
from evdecomp.kplanes import KPlaneField, query
from evdecomp.trajectory import MotionBasis, TrajectoryField, eval_flow_field
from evdecomp.voxel import build_volume


@pytest.fixture
def stream(rng):
    n = 50
    return EventStream(np.sort(rng.uniform(0.1, 0.9, n)), rng.integers(0, 7, n),
                       rng.integers(0, 5, n), rng.choice([-1, 1], n), 7, 5, 0.0, 1.0)


def same_stream(a, b):
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in "txyp") and \
        a.shape == b.shape


def test_config_round_trip(tmp_path):
    io.write_config(tmp_path / "a.cfg", {"K": 5, "basis": "cosine"})
    assert io.read_config(tmp_path / "a.cfg") == {"K": "5", "basis": "cosine"}
    assert io.parse_config("# hi\n\nx = 1 # note\n") == {"x": "1"}
    with pytest.raises(InputError):
        io.parse_config("novalue\n")
    with pytest.raises(InputError):
        io.read_config(tmp_path / "missing.cfg")


def test_events_csv_round_trip(tmp_path, stream):
    io.write_events_csv(tmp_path / "e.csv", stream)
    back = io.read_events(tmp_path / "e.csv")
    assert same_stream(stream, back) and (back.t_begin, back.t_end) == (0.0, 1.0)


def test_events_csv_without_header(tmp_path):
    (tmp_path / "e.csv").write_text("0.5 1 2 1\n0.75 0 0 -1\n")
    with pytest.raises(InputError, match="geometry"):
        io.read_events(tmp_path / "e.csv")
    s = io.read_events(tmp_path / "e.csv", width=3, height=3)
    assert len(s) == 2 and s.p.tolist() == [1, -1]


def test_events_csv_malformed(tmp_path):
    (tmp_path / "e.csv").write_text("# width=3 height=3\n0.5 1 two 1\n")
    with pytest.raises(InputError, match=":2:"):
        io.read_events(tmp_path / "e.csv")


def test_events_bin_round_trip(tmp_path, stream):
    io.write_events_bin(tmp_path / "e.evs", stream)
    back = io.read_events(tmp_path / "e.evs", t_begin=0.0, t_end=1.0)
    assert same_stream(stream, back)
    default = io.read_events(tmp_path / "e.evs")
    assert default.t_begin == stream.t[0] and default.t_end == stream.t[-1]
    data = (tmp_path / "e.evs").read_bytes()
    (tmp_path / "cut.evs").write_bytes(data[:-3])
    with pytest.raises(InputError, match="truncated"):
        io.read_events(tmp_path / "cut.evs")


@pytest.mark.parametrize("shape", [(4, 6), (4, 6, 3)])
def test_pnm_round_trip_16_bit(tmp_path, rng, shape):
    v = rng.uniform(size=shape)
    io.write_pnm(tmp_path / "f.pnm", Frame(v))
    back = io.read_pnm(tmp_path / "f.pnm", 0.5)
    assert back.timestamp == 0.5 and back.values.shape == shape
    assert np.abs(back.values - v).max() <= 0.5 / 65535 + 1e-15


def test_pnm_reads_8_bit_and_comments(tmp_path):
    (tmp_path / "g.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    assert io.read_pnm(tmp_path / "g.pgm").values.tolist() == [[0.0, 1.0]]
    (tmp_path / "a.pgm").write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(InputError):
        io.read_pnm(tmp_path / "a.pgm")
    (tmp_path / "t.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes([1]))
    with pytest.raises(InputError, match="truncated"):
        io.read_pnm(tmp_path / "t.pgm")


def test_frames_manifest(tmp_path, rng):
    seq = FrameSequence(rng.uniform(size=(3, 4, 5)), [0.0, 0.1, 0.3])
    path = io.write_frames(tmp_path / "out", seq)
    lines = path.read_text().splitlines()
    assert lines[1] == "1 0.1 frame_00001.pgm"
    back = io.read_frames(path)
    assert np.array_equal(back.times, seq.times)
    assert np.abs(back.frames - seq.frames).max() <= 0.5 / 65535 + 1e-15
    colour = io.read_frames(io.write_frames(tmp_path / "c", seq, "ppm"))
    assert colour.frames.shape == (3, 4, 5, 3)
    (tmp_path / "empty.txt").write_text("# nothing\n")
    with pytest.raises(InputError):
        io.read_frames(tmp_path / "empty.txt")


def test_volume_round_trip(tmp_path, stream):
    vol = build_volume(stream, 0.0, 1.0, 7)
    io.write_volume(tmp_path / "v.evv", vol)
    back = io.read_volume(tmp_path / "v.evv")
    assert back.polarity_separated
    assert np.array_equal(back.data, vol.data.astype(np.float32))


@pytest.mark.parametrize("hidden", [None, 3])
def test_kplanes_round_trip(tmp_path, hidden):
    fld = KPlaneField.create(features=2, out_channels=3, n_scales=2, spatial_res=(6, 4),
                             temporal_res=5, hidden=hidden, noise=0.3)
    io.write_kplanes(tmp_path / "k.kpf", fld)
    back = io.read_kplanes(tmp_path / "k.kpf")
    for (n, a), (m, b) in zip(fld.parameters().items(), back.parameters().items()):
        assert n == m and np.array_equal(a.astype(np.float32), b)
    q = np.random.default_rng(0).uniform(size=(10, 3))
    assert np.allclose(query(fld, q), query(back, q), atol=1e-5)


@pytest.mark.parametrize("basis", [MotionBasis("cosine", 3),
                                   MotionBasis("tabulated", samples=np.eye(4)[:, :2])])
def test_trajectory_round_trip(tmp_path, rng, basis):
    fld = TrajectoryField(basis, rng.normal(size=(3, 4, 2 * basis.K)), 0.25, 0.75)
    io.write_trajectory(tmp_path / "t.trj", fld)
    back = io.read_trajectory(tmp_path / "t.trj")
    assert back.basis == basis
    assert (back.t0, back.t1) == (0.25, 0.75)
    assert np.allclose(eval_flow_field(back, 0.5), eval_flow_field(fld, 0.5), atol=1e-5)


def test_flow_round_trip(tmp_path, rng):
    f = rng.normal(size=(3, 5, 2))
    io.write_flow(tmp_path / "f.flo", f)
    assert np.array_equal(io.read_flow(tmp_path / "f.flo"), f.astype(np.float32))
    with pytest.raises(InputError):
        io.read_volume(tmp_path / "f.flo")

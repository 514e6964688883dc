import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hybridpinn import datasets, physics, _kernels
from hybridpinn.datasets import IRFrame, IRFrameStack, IRWindowSpec, Placement
from hybridpinn.errors import DomainError, StructuralError
from hybridpinn.refsolver import FieldSnapshot

PLATE = physics.DomainSpec("box", (0.040, 0.010, 0.006), 0.3)
BEAM = physics.LaserSpec.bidirectional(500.0, 1.5e-3, (0.010, 0.005), (0.030, 0.005), 0.010)


def _snaps(field_fn, times=(0.0, 0.1, 0.2, 0.3), h=0.5e-3):
    nx, ny, nz = 81, 21, 13
    x = np.arange(nx) * h
    y = np.arange(ny) * h
    X, Y = np.meshgrid(x, y, indexing="ij")
    out = []
    for t in times:
        vals = np.empty((nx, ny, nz))
        vals[:] = field_fn(X, Y, t)[:, :, None]
        out.append(FieldSnapshot(t, (0.0, 0.0, 0.0), (h, h, h), vals))
    return out


def test_uniform_field_noise_statistics(kernel_path):
    st_ = datasets.gen_synthetic_ir(_snaps(lambda X, Y, t: np.full(X.shape, 298.0)), BEAM,
                                    IRWindowSpec(sigma=100.0, seed=3), PLATE)
    assert len(st_) == 4 and st_.shape == (24, 24)
    v = np.concatenate([f.values.ravel() for f in st_.frames])
    # window is 6 mm wide and the plate 10 mm: every pixel lands on the part
    assert not np.isnan(v).any()
    assert abs(v.mean() - 298.0) < 10.0
    assert abs(v.std() - 100.0) < 5.0


def test_hot_spot_masked(kernel_path):
    def hot(X, Y, t):
        c, _ = physics.laser_centers(np.array([t]), BEAM)
        d = np.hypot(X - c[0, 0], Y - c[0, 1])
        return np.where(d < 1e-3, 2500.0, 298.0)

    st_ = datasets.gen_synthetic_ir(_snaps(hot), BEAM, IRWindowSpec(sigma=0.0), PLATE)
    f = st_.frames[1]
    assert np.isnan(f.values[10:14, 10:14]).all()
    assert np.all(f.values[~np.isnan(f.values)] <= 2000.0)


def test_noiseless_pixels_equal_oracle(kernel_path):
    lin = lambda X, Y, t: 300.0 + 2e4 * X + 5e4 * Y + 100.0 * t
    st_ = datasets.gen_synthetic_ir(_snaps(lin), BEAM, IRWindowSpec(sigma=0.0), PLATE)
    for f in st_.frames:
        fx, fy = f.pixel_centres()
        assert np.allclose(f.values, lin(fx, fy, f.time), rtol=0, atol=1e-9)


def test_window_leaving_domain_is_masked():
    edge = physics.LaserSpec.bidirectional(500.0, 1.5e-3, (0.0, 0.0), (0.001, 0.0), 0.010)
    st_ = datasets.gen_synthetic_ir(_snaps(lambda X, Y, t: np.full(X.shape, 400.0)), edge,
                                    IRWindowSpec(sigma=0.0), PLATE)
    f = st_.frames[0]
    assert np.isnan(f.values[:12, :]).all() and np.isnan(f.values[:, :12]).all()
    assert not np.isnan(f.values[12:, 12:]).any()


def test_snapshot_cadence_must_cover_frames():
    with pytest.raises(DomainError):
        datasets.gen_synthetic_ir(_snaps(lambda X, Y, t: X * 0 + 298.0, times=(0.0, 0.2)), BEAM,
                                  IRWindowSpec(), PLATE)


def test_seeded_noise_reproducible():
    snaps = _snaps(lambda X, Y, t: np.full(X.shape, 500.0))
    a = datasets.gen_synthetic_ir(snaps, BEAM, IRWindowSpec(seed=9), PLATE)
    b = datasets.gen_synthetic_ir(snaps, BEAM, IRWindowSpec(seed=9), PLATE)
    c = datasets.gen_synthetic_ir(snaps, BEAM, IRWindowSpec(seed=10), PLATE)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.frames, b.frames))
    assert not np.array_equal(a.frames[0].values, c.frames[0].values)


def test_window_spec_validation():
    with pytest.raises(DomainError):
        IRWindowSpec(window=6e-3, pitch=0.35e-3)
    with pytest.raises(DomainError):
        IRWindowSpec(threshold=200.0)
    assert IRWindowSpec().n_pixels == 24


def _camera_stack(n=2, rows=480, cols=640, seed=0):
    rng = np.random.default_rng(seed)
    frames = []
    for k in range(n):
        v = rng.uniform(300, 1800, (rows, cols))
        v[rng.uniform(size=v.shape) < 0.05] = np.nan
        frames.append(IRFrame(0.1 * k, (0.0, 0.0), 1e-4, v))
    return IRFrameStack(frames)


def test_ingest_shapes(kernel_path):
    st_ = _camera_stack()
    assert datasets.ingest_ir(st_, (0, 0, 480, 640), 8).shape == (60, 80)
    assert datasets.ingest_ir(st_, (0, 160, 480, 320), 8).shape == (60, 40)
    same = datasets.ingest_ir(st_, None, 1)
    assert all(np.array_equal(a.values, b.values, equal_nan=True) for a, b in zip(same.frames, st_.frames))
    const = IRFrameStack([IRFrame(0.0, (0.0, 0.0), 1e-4, np.full((32, 48), 777.0))])
    assert np.all(datasets.ingest_ir(const, None, 4).frames[0].values == 777.0)


def test_ingest_geometry():
    st_ = IRFrameStack([IRFrame(0.0, (1.0, 2.0), 0.5, np.arange(64.0).reshape(8, 8))])
    out = datasets.ingest_ir(st_, (2, 4, 4, 4), 2).frames[0]
    # block (0, 0) covers rows 2-3, cols 4-5, centred on pixel (2.5, 4.5)
    assert out.origin == (1.0 + 4.5 * 0.5, 2.0 + 2.5 * 0.5) and out.pitch == 1.0
    assert out.values[0, 0] == np.mean([20, 21, 28, 29])
    with pytest.raises(DomainError):
        datasets.ingest_ir(st_, (6, 6, 4, 4), 2)


@settings(max_examples=60, deadline=None)
@given(frame=hnp.arrays(np.float64, st.tuples(st.integers(1, 24), st.integers(1, 24)),
                        elements=st.one_of(st.floats(250, 3000), st.just(np.nan))),
       factor=st.integers(1, 4), use_numba=st.booleans())
def test_block_mean_mask_conservation(frame, factor, use_numba):
    saved = _kernels.USE_NUMBA
    _kernels.USE_NUMBA = use_numba and saved
    try:
        if frame.shape[0] < factor or frame.shape[1] < factor:
            return
        out = _kernels.block_mean(frame, factor)
    finally:
        _kernels.USE_NUMBA = saved
    r, c = out.shape
    blocks = frame[: r * factor, : c * factor].reshape(r, factor, c, factor)
    all_masked = np.isnan(blocks).all(axis=(1, 3))
    assert np.array_equal(np.isnan(out), all_masked)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        want = np.nanmean(blocks, axis=(1, 3))
    assert np.allclose(out[~all_masked], want[~all_masked], rtol=1e-13)


@settings(max_examples=60, deadline=None)
@given(frame=hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                        elements=st.floats(250, 3000)),
       factor=st.integers(1, 4))
def test_block_mean_preserves_mean(frame, factor):
    big = np.kron(frame, np.ones((factor, factor))) + np.tile(
        np.linspace(-1, 1, factor * factor).reshape(factor, factor), frame.shape)
    out = _kernels.block_mean(big, factor)
    assert abs(out.mean() - big.mean()) <= 64 * np.spacing(big.mean())


def test_irstack_round_trip(tmp_path):
    st_ = _camera_stack(3, 6, 5)
    path = tmp_path / "f.irstack"
    datasets.write_irstack(st_, path)
    assert path.read_text().splitlines()[0] == "IRSTACK v1, 6, 5, 0.0001, 0.0, 0.1"
    back = datasets.read_irstack(path)
    assert len(back) == 3
    for a, b in zip(st_.frames, back.frames):
        assert a.time == b.time and a.origin == b.origin
        assert np.array_equal(a.values, b.values, equal_nan=True)


def test_irstack_without_comments(tmp_path):
    path = tmp_path / "plain.irstack"
    path.write_text("IRSTACK v1, 2, 3, 0.001, 0.5, 0.25\n1,2,3\n4,NaN,6\n7,8,9\n10,11,12\n")
    st_ = datasets.read_irstack(path)
    assert [f.time for f in st_.frames] == [0.5, 0.75]
    assert np.isnan(st_.frames[0].values[1, 1]) and st_.n_valid() == 11


@pytest.mark.parametrize("text", [
    "IRSTACK v2, 2, 3, 0.001, 0, 0.1\n",
    "IRSTACK v1, 2, 3\n",
    "IRSTACK v1, two, 3, 0.001, 0, 0.1\n",
    "IRSTACK v1, 2, 3, 0.001, 0, 0.1\n1,2,3\n4,5\n",
    "IRSTACK v1, 2, 3, 0.001, 0, 0.1\n1,2,3\n4,5,6\n7,8,9\n",
    "IRSTACK v1, 2, 3, 0.001, 0, 0.1\n1,2,x\n4,5,6\n",
    "",
])
def test_irstack_malformed(tmp_path, text):
    path = tmp_path / "bad.irstack"
    path.write_text(text)
    with pytest.raises(StructuralError):
        datasets.read_irstack(path)


def test_stack_invariants():
    f = IRFrame(0.0, (0.0, 0.0), 1e-3, np.zeros((2, 2)))
    with pytest.raises(StructuralError):
        IRFrameStack([f, IRFrame(0.0, (0.0, 0.0), 1e-3, np.zeros((2, 2)))])
    with pytest.raises(StructuralError):
        IRFrameStack([f, IRFrame(0.1, (0.0, 0.0), 1e-3, np.zeros((3, 2)))])


def test_frames_to_data():
    masked = IRFrameStack([IRFrame(0.0, (0.0, 0.0), 1e-3, np.full((3, 3), np.nan))])
    data, dropped = datasets.frames_to_data(masked)
    assert len(data) == 0 and dropped == 0
    sym = IRFrameStack([IRFrame(0.1, (0.5e-3, 0.5e-3), 1e-3, np.full((4, 6), 500.0))])
    data, _ = datasets.frames_to_data(sym)
    half, _ = datasets.frames_to_data(sym, region=[(None, None), (2e-3, None)])
    assert len(half) * 2 == len(data) == 24
    wall = physics.DomainSpec("wall", (0.004, 0.003), 1.0, thickness=1e-3, k_sub=50.0, H_sub=0.01)
    data, dropped = datasets.frames_to_data(sym, domain=wall)
    assert dropped == 12 and len(data) == 12
    flipped, _ = datasets.frames_to_data(sym, Placement(2, (0.0, 4e-3), flip_rows=True))
    assert flipped.pts[:, 1].max() == pytest.approx(3.5e-3)
    in3d, _ = datasets.frames_to_data(sym, Placement(3, fixed=0.006))
    assert in3d.pts.shape == (24, 3) and np.all(in3d.pts[:, 2] == 0.006)


def test_synthetic_round_trip_within_noise():
    field = lambda X, Y, t: 400.0 + 3e4 * X + 100.0 * t
    snaps = _snaps(field)
    st_ = datasets.gen_synthetic_ir(snaps, BEAM, IRWindowSpec(sigma=20.0, seed=1), PLATE)
    data, dropped = datasets.frames_to_data(st_, Placement(3, fixed=PLATE.lengths[2]), domain=PLATE)
    assert dropped == 0 and len(data) == 4 * 24 * 24
    resid = data.T - field(data.pts[:, 0], data.pts[:, 1], data.t)
    assert abs(resid.mean()) < 3.0 and resid.std() == pytest.approx(20.0, rel=0.1)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hybridpinn import loss, network, physics, sampling, scaling, trainer
from hybridpinn.autodiff import eval_with_input_derivs
from hybridpinn.errors import (BadMagicError, CheckpointError, StructuralError,
                               TruncatedCheckpointError, VersionMismatchError)


def test_same_seed_identical_params():
    a = network.init(network.NetworkSpec(4, (8, 8), seed=7))
    b = network.init(network.NetworkSpec(4, (8, 8), seed=7))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights + a.biases, b.weights + b.biases))


def test_different_seeds_differ():
    a = network.init(network.NetworkSpec(4, (8,), seed=1))
    b = network.init(network.NetworkSpec(4, (8,), seed=2))
    assert not np.array_equal(a.weights[0], b.weights[0])


def test_shapes_and_glorot_bounds():
    spec = network.NetworkSpec(4, (8,), seed=0)
    p = network.init(spec)
    assert [w.shape for w in p.weights] == [(8, 4), (1, 8)]
    assert all(not b.any() for b in p.biases)
    assert np.abs(p.weights[0]).max() <= np.sqrt(6 / 12)
    assert p.mu == {}


def test_zero_network_gives_ln2():
    spec = network.NetworkSpec(4, (8, 8), seed=0)
    p = network.init(spec)
    z = network.NetworkParams(tuple(np.zeros_like(w) for w in p.weights),
                              tuple(np.zeros_like(b) for b in p.biases))
    assert network.forward(z, np.zeros((3, 4))) == pytest.approx(np.log(2), abs=0)


def test_forward_matches_bundle_value():
    p = network.init(network.NetworkSpec(4, (16, 16), seed=4))
    x = np.random.default_rng(0).uniform(-1, 1, (20, 4))
    assert all(network.forward(p, x[i])[0] == eval_with_input_derivs(p, x[i]).value for i in range(20))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1),
       scale=st.floats(0.1, 20.0),
       x=hnp.arrays(np.float64, (5, 4), elements=st.floats(-50, 50)))
def test_output_positive(seed, scale, x):
    p = network.init(network.NetworkSpec(4, (8, 8), seed=seed))
    # exaggerated weights push the last pre-activation far negative
    p = network.NetworkParams(tuple(w * scale for w in p.weights), p.biases)
    u = network.forward(p, x)
    assert np.all(u > 0) and np.all(np.isfinite(u))


def test_output_strictly_positive_on_moderate_inputs():
    p = network.init(network.NetworkSpec(4, (8,), seed=0))
    p = network.NetworkParams(p.weights, (p.biases[0], np.array([-30.0])))
    assert np.all(network.forward(p, np.random.default_rng(0).uniform(-1, 1, (50, 4))) > 0)


def _spec_and_params():
    spec = network.NetworkSpec(4, (6, 5), seed=11)
    p = network.init(spec, mu={"absorptivity": network.MuParam(network.mu_raw_for("absorptivity", 0.3)),
                               "h": network.MuParam(1.5, trainable=False)})
    return spec, p


def test_checkpoint_round_trip_bit_exact(tmp_path):
    spec, p = _spec_and_params()
    n = p.flatten().size
    rng = np.random.default_rng(0)
    st_in = network.TrainerState(epoch=42, adam_step=17, m=rng.normal(size=n), v=rng.uniform(size=n),
                                 metadata={"mode": "inverse", "final_total": 0.125})
    path = tmp_path / "m.ckpt"
    network.save_checkpoint(p, spec, st_in, path)
    q, spec2, st_out = network.load_checkpoint(path)
    assert spec2 == spec
    assert np.array_equal(q.flatten(), p.flatten())
    assert q.mu["h"].trainable is False
    assert st_out.epoch == 42 and st_out.adam_step == 17
    assert np.array_equal(st_out.m, st_in.m) and np.array_equal(st_out.v, st_in.v)
    assert st_out.metadata == st_in.metadata
    x = rng.uniform(-1, 1, (100, 4))
    assert np.array_equal(network.forward(p, x), network.forward(q, x))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 63), widths=st.lists(st.integers(1, 9), min_size=1, max_size=3))
def test_checkpoint_round_trip_property(tmp_path_factory, seed, widths):
    spec = network.NetworkSpec(3, tuple(widths), seed=seed)
    p = network.init(spec)
    path = tmp_path_factory.mktemp("ck") / "p.ckpt"
    network.save_checkpoint(p, spec, None, path)
    q, spec2, _ = network.load_checkpoint(path)
    assert spec2 == spec
    assert np.array_equal(q.flatten(), p.flatten())


def test_checkpoint_errors(tmp_path):
    spec, p = _spec_and_params()
    path = tmp_path / "m.ckpt"
    network.save_checkpoint(p, spec, None, path)
    data = path.read_bytes()
    for cut in (4, 20, len(data) // 2, len(data) - 1):
        bad = tmp_path / f"t{cut}.ckpt"
        bad.write_bytes(data[:cut])
        with pytest.raises(TruncatedCheckpointError):
            network.load_checkpoint(bad)
    bad = tmp_path / "magic.ckpt"
    bad.write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(BadMagicError):
        network.load_checkpoint(bad)
    bad = tmp_path / "ver.ckpt"
    bad.write_bytes(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(VersionMismatchError):
        network.load_checkpoint(bad)
    bad = tmp_path / "trail.ckpt"
    bad.write_bytes(data + b"\x00")
    with pytest.raises(CheckpointError):
        network.load_checkpoint(bad)
    for cls in (BadMagicError, VersionMismatchError, TruncatedCheckpointError):
        assert issubclass(cls, StructuralError)


def test_mu_positivity_map_round_trip():
    for name, v in [("absorptivity", 0.4), ("cp", 500.0), ("k", 1e-5), ("k", 10.0)]:
        assert network.mu_physical(name, network.mu_raw_for(name, v)) == pytest.approx(v, rel=1e-12)
    with pytest.raises(StructuralError):
        network.mu_raw_for("k", 0.0)


def _rod_problem():
    dom = physics.DomainSpec("rod", (0.02,), 0.5, area=1e-6)
    las = physics.LaserSpec.bidirectional(10.0, 3e-3, (0.005,), (0.015,), 0.02)
    ph = physics.PhysicalParams(7800.0, physics.PropertyModel.constant(500.0),
                                physics.PropertyModel.constant(50.0), 0.0, 0.0, 0.4)
    col = sampling.build_collocation(dom, las, sampling.SamplingConfig(dt=0.1, top_spacing=2e-3), 298.0)
    prob = loss.HeatProblem(dom, ph, las, scaling.ScalingSpec(dom.lengths, dom.t_end, delta_T=400.0))
    return col, prob


def test_different_seeds_give_different_initial_losses():
    col, prob = _rod_problem()
    totals = {loss.assemble(network.init(network.NetworkSpec(2, (8, 8), seed=s)), col, prob).total
              for s in range(5)}
    assert len(totals) == 5


def test_stored_eta_resumes_in_inverse_run(tmp_path):
    col, prob = _rod_problem()
    spec = network.NetworkSpec(2, (8,), seed=0)
    p = network.init(spec, mu={"absorptivity": network.MuParam(network.mu_raw_for("absorptivity", 0.37))})
    network.save_checkpoint(p, spec, None, tmp_path / "eta.ckpt")
    q, _, state = network.load_checkpoint(tmp_path / "eta.ckpt")
    res = trainer.train(q, col, prob, cfg=trainer.TrainConfig(epochs=2, eval_every=1), state=state)
    assert res.history[0]["mu_absorptivity"] == pytest.approx(0.37, rel=1e-14)
    assert res.history[-1]["mu_absorptivity"] != res.history[0]["mu_absorptivity"]

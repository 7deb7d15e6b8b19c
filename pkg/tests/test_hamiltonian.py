import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pidenet import tensor as T
from pidenet.gradcheck import gradient_check
from pidenet.hamiltonian import (
    HamiltonianBlock,
    NetworkConfig,
    build_network,
    forward,
    hamiltonian_step,
    hamiltonian_step_inverse,
)
from pidenet.tensor import ShapeError, Tensor, parameter


def random_block(seed, channels=4, h=0.1):
    rng = np.random.default_rng(seed)
    block = HamiltonianBlock(channels, h=h, rng=rng)
    for bn in (block.bn1, block.bn2):
        bn.mode = "eval"
        bn.running_mean = rng.standard_normal(bn.channels) * 0.1
        bn.running_var = rng.random(bn.channels) + 0.5
        bn.scale.data[:] = rng.random(bn.channels) + 0.5
        bn.shift.data[:] = rng.standard_normal(bn.channels) * 0.1
    block.b1.data[:] = rng.standard_normal(block.b1.shape) * 0.1
    block.b2.data[:] = rng.standard_normal(block.b2.shape) * 0.1
    return block, rng


def test_zero_step_and_zero_weights_are_identity(rng):
    y, z = rng.standard_normal((2, 2, 4, 4, 2))
    block = HamiltonianBlock(4, h=0.0, rng=rng)
    a, b = hamiltonian_step(y, z, block)
    np.testing.assert_array_equal(a.data, y)
    np.testing.assert_array_equal(b.data, z)
    block = HamiltonianBlock(4, h=0.1, rng=rng)
    block.k1.data[:] = 0
    block.k2.data[:] = 0
    a, b = hamiltonian_step(y, z, block)
    np.testing.assert_array_equal(a.data, y)
    np.testing.assert_array_equal(b.data, z)
    block = HamiltonianBlock(4, h=0.0, rng=rng)
    block.set_mode("eval")
    a, b = hamiltonian_step_inverse(y, z, block)
    np.testing.assert_array_equal(a.data, y)
    np.testing.assert_array_equal(b.data, z)


@given(st.integers(0, 100_000))
def test_round_trips(seed):
    block, rng = random_block(seed)
    y, z = rng.standard_normal((2, 2, 5, 5, 2))
    y1, z1 = hamiltonian_step(y, z, block)
    y0, z0 = hamiltonian_step_inverse(y1, z1, block)
    assert max(np.abs(y0.data - y).max(), np.abs(z0.data - z).max()) < 1e-10
    yi, zi = hamiltonian_step_inverse(y, z, block)
    yf, zf = hamiltonian_step(yi, zi, block)
    assert max(np.abs(yf.data - y).max(), np.abs(zf.data - z).max()) < 1e-10


def test_inverse_refuses_train_mode(rng):
    block = HamiltonianBlock(4, rng=rng)
    with pytest.raises(RuntimeError):
        block.inverse(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 2)))


def test_odd_channels_rejected():
    with pytest.raises(ShapeError):
        HamiltonianBlock(5)


def test_energy_change_is_first_order_in_h():
    # on a small state the O(h) term dominates the O(h^2) one already at h = 0.1
    ratios = []
    for seed in range(41):
        block, rng = random_block(seed, channels=2)
        y, z = rng.standard_normal((2, 1, 3, 3, 1))
        e0 = np.sum(y**2) + np.sum(z**2)
        changes = []
        for h in (0.1, 0.01):
            block.h = h
            a, b = hamiltonian_step(y, z, block)
            changes.append(abs(np.sum(a.data**2) + np.sum(b.data**2) - e0))
        ratios.append(changes[0] / changes[1])
    assert 5.0 <= np.median(ratios) <= 15.0


def test_block_gradients(rng):
    block = HamiltonianBlock(4, h=0.1, rng=rng)
    x = parameter(rng.standard_normal((2, 4, 4, 4)), name="x")
    probe = rng.standard_normal(x.shape)
    report = gradient_check(lambda: T.tsum(block(x) * probe), [x] + list(block.parameters().values()))
    assert max(report.values()) < 1e-6, report


def test_layer_counts():
    assert NetworkConfig(m=6).layer_count() == 74
    assert NetworkConfig(m=2).layer_count() == 26
    for m in range(1, 8):
        assert NetworkConfig(m=m).layer_count() == 12 * m + 2


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(channels=(32, 63, 112))
    with pytest.raises(ValueError):
        NetworkConfig(nonlocal_family="bogus")
    with pytest.raises(ValueError):
        NetworkConfig(units=2)
    cfg = NetworkConfig(nonlocal_family="fraclap", s=0.25)
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


def tiny_cfg(**kw):
    base = dict(m=1, channels=(4, 4, 8), input_conv_filters=4, classes=3)
    base.update(kw)
    return NetworkConfig(**base)


def test_classifier_shape_walk(rng):
    cfg = tiny_cfg(m=1, channels=(6, 6, 6), input_conv_filters=6)
    net = build_network(cfg, seed=0)
    assert net.feature_shape((32, 32)) == (4, 4)
    feats = net.features(rng.standard_normal((2, 32, 32, 3)))
    assert feats.shape == (2, 8, 8, 6)
    assert forward(net, rng.standard_normal((2, 32, 32, 3))).shape == (2, 3)


def test_input_too_small_for_pooling():
    with pytest.raises(ShapeError):
        build_network(tiny_cfg(), seed=0, input_hw=(4, 4))


def test_dense_head_shape(rng):
    net = build_network(tiny_cfg(head="dense", classes=5), seed=0)
    assert net(rng.standard_normal((2, 8, 8, 3))).shape == (2, 8, 8, 5)


def test_identical_images_give_identical_rows(rng):
    net = build_network(tiny_cfg(nonlocal_family="diffusion"), seed=0, input_hw=(8, 8))
    img = rng.standard_normal((1, 8, 8, 3))
    out = net(np.concatenate([img, img])).data
    np.testing.assert_array_equal(out[0], out[1])


def test_eval_mode_is_batch_independent(rng):
    net = build_network(tiny_cfg(nonlocal_family="fraclap"), seed=0, input_hw=(8, 8)).eval()
    x = rng.standard_normal((4, 8, 8, 3))
    perm = np.array([2, 0, 3, 1])
    np.testing.assert_allclose(net(x[perm]).data, net(x).data[perm], atol=1e-12)


def test_same_seed_same_weights():
    a = build_network(tiny_cfg(nonlocal_family="log"), seed=3, input_hw=(8, 8)).parameters()
    b = build_network(tiny_cfg(nonlocal_family="log"), seed=3, input_hw=(8, 8)).parameters()
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)


def test_nonlocal_placement_and_weights():
    net = build_network(tiny_cfg(m=3, nonlocal_family="diffusion"), seed=0, input_hw=(8, 8))
    names = net.parameters()
    assert [k for k in names if k.endswith("nonlocal.k1")] == [f"unit{u}.nonlocal.k1" for u in range(3)]
    assert all(unit.nonlocal_position == 2 for unit in net.units)
    assert build_network(tiny_cfg(m=1, nonlocal_family="diffusion"), seed=0).units[0].nonlocal_position == 1


def test_full_network_gradient(rng):
    cfg = tiny_cfg(m=1, channels=(4, 4, 4), nonlocal_family="diffusion", classes=2)
    net = build_network(cfg, seed=0, input_hw=(8, 8))
    x = rng.standard_normal((3, 8, 8, 3))
    labels = np.array([0, 1, 1])
    params = list(net.parameters().values())
    report = gradient_check(lambda: T.softmax_cross_entropy(net(x), labels), params, max_entries=6)
    assert max(report.values()) < 1e-4, {k: v for k, v in report.items() if v > 1e-6}

"""Acceptance suite: one recorded PASS / FAIL line per criterion.

Criteria 8 and 9 train 15 small networks on the synthetic long-range task
and take most of the suite's run time.
"""

import math
import time

import numpy as np
import pytest
from conftest import record_criterion

from pidenet import functional as F
from pidenet import pide_lab as lab
from pidenet import tensor as T
from pidenet.diagnostics.cost import flop_estimate, pool_sweep
from pidenet.diagnostics.eigen import eigen
from pidenet.diagnostics.spectral import analyze_matrix, quadratic_form_check
from pidenet.experiment import FieldOfViewConfig, run_comparison
from pidenet.gradcheck import gradient_check
from pidenet.hamiltonian import HamiltonianBlock, NetworkConfig, build_network, hamiltonian_step, hamiltonian_step_inverse
from pidenet.kernels import OPERATOR_FAMILIES, KernelSpec, kernel_values, pairwise_sqdist
from pidenet.nonlocal_block import NonlocalBlock, matrix_form_step
from pidenet.special import EULER_GAMMA, operator_constant
from pidenet.tensor import parameter
from pidenet.trainer import (
    SGD,
    SyntheticLongRangeSpec,
    TrainConfig,
    load_checkpoint,
    load_cifar10,
    longrange_dataset,
    read_cifar_records,
    save_checkpoint,
    train,
    write_cifar_records,
)

GRAD_TOL = 1e-4
FAMILIES = sorted(OPERATOR_FAMILIES.values())


def primitive_cases(rng):
    s = lambda shape, name: parameter(rng.standard_normal(shape), name=name)
    bn = F.BatchNormState(3)
    bn.scale.data[:] = rng.random(3) + 0.5
    bn_eval = F.BatchNormState(3, mode="eval")
    bn_eval.running_var = rng.random(3) + 0.5
    labels = np.array([0, 2, 1, 3])
    cases = {
        "add": lambda a, b: a + b,
        "sub": lambda a, b: a - b,
        "mul": lambda a, b: a * b,
        "div": lambda a, b: a / (b * b + 1.0),
        "neg": lambda a, b: -a * b,
        "power": lambda a, b: (a * a + 0.5) ** 1.7 * b,
        "exp": lambda a, b: T.exp(a * 0.5) * b,
        "log": lambda a, b: T.log(a * a + 0.5) * b,
        "relu": lambda a, b: T.relu(a) * b,
        "sum": lambda a, b: T.tsum(a * b, axis=1),
        "mean": lambda a, b: T.mean(a * b, axis=0, keepdims=True),
        "reshape": lambda a, b: T.reshape(a, (2, 8)) * T.reshape(b, (2, 8)),
        "transpose": lambda a, b: T.transpose(a) * T.transpose(b),
        "getitem": lambda a, b: a[1:, 1:] * b[:-1, :-1],
        "concat": lambda a, b: T.concat([a, b * b], axis=1),
        "split": lambda a, b: T.split(a, 2, axis=1)[1] * T.split(b, 2, axis=1)[0],
        "matmul": lambda a, b: T.matmul(a, T.transpose(b)),
        "softmax": lambda a, b: T.softmax(a, axis=1) * b,
        "log_softmax": lambda a, b: T.log_softmax(a, axis=1) * b,
        "cross_entropy": lambda a, b: T.cross_entropy(T.softmax(a * b, axis=1), labels),
        "softmax_cross_entropy": lambda a, b: T.softmax_cross_entropy(a * b, labels),
    }
    out = []
    for name, fn in cases.items():
        a, b = s((4, 4), "a"), s((4, 4), "b")
        out.append((name, lambda fn=fn, a=a, b=b: fn(a, b), [a, b]))
    x = s((2, 4, 4, 3), "x")
    w3 = s((3, 3, 3, 2), "w")
    w1 = s((3, 2), "w1")
    bias = s(2, "bias")
    out += [
        ("conv2d_same", lambda: F.conv2d(x, w3, bias), [x, w3, bias]),
        ("conv2d_none", lambda: F.conv2d(x, w3, bias, padding="none"), [x, w3, bias]),
        ("conv2d_transpose", lambda: F.conv2d_transpose(F.conv2d(x, w3), w3), [x, w3]),
        ("conv1x1", lambda: F.conv1x1(x, w1), [x, w1]),
        ("avg_pool", lambda: F.avg_pool(x, 2), [x]),
        ("max_pool", lambda: F.max_pool(x, 2), [x]),
        ("batchnorm_train", lambda: F.batchnorm(x, bn, update=False), [x, bn.scale, bn.shift]),
        ("batchnorm_eval", lambda: F.batchnorm(x, bn_eval), [x, bn_eval.scale, bn_eval.shift]),
        ("flatten", lambda: F.flatten(x) * 2.0, [x]),
    ]
    p, q = s((2, 5, 3), "p"), s((2, 4, 3), "q")
    out.append(("pairwise_sqdist", lambda: pairwise_sqdist(p, q), [p, q]))
    for fam in ("dot", "gaussian", "fractional", "riesz", "log"):
        spec = KernelSpec(fam)
        p, q = s((1, 5, 3), "p"), s((1, 3, 3), "q")
        out.append((f"kernel_{fam}", lambda spec=spec, p=p, q=q: kernel_values(p, q, spec), [p, q]))
    return out


@pytest.mark.filterwarnings("ignore::pidenet.tensor.DisconnectedGradientWarning")
def test_criterion_01_gradient_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for name, fn, params in primitive_cases(rng):
        probe = rng.standard_normal(fn().shape)
        worst[f"op:{name}"] = max(gradient_check(lambda: T.tsum(fn() * probe), params, step=1e-5).values())
    for fam in FAMILIES:
        for stages in (1, 2):
            for pool in (1, 2):
                block = NonlocalBlock(4, spec=KernelSpec(fam), stages=stages, pool=pool, rng=np.random.default_rng(stages * 10 + pool))
                x = parameter(rng.standard_normal((2, 4, 4, 4)), name="x")
                probe = rng.standard_normal(x.shape)
                params = [x] + list(block.parameters().values())
                rep = gradient_check(lambda: T.tsum(block(x) * probe), params, step=1e-5)
                worst[f"nonlocal:{fam}/stages={stages}/pool={pool}"] = max(rep.values())
    cfg = NetworkConfig(m=1, channels=(4, 4, 4), input_conv_filters=4, nonlocal_family="diffusion", classes=3)
    net = build_network(cfg, seed=0, input_hw=(8, 8))
    x = rng.standard_normal((3, 8, 8, 3))
    labels = np.array([0, 1, 2])
    rep = gradient_check(lambda: T.softmax_cross_entropy(net(x), labels), list(net.parameters().values()), step=1e-5, max_entries=12)
    worst["network:m=1"] = max(rep.values())
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < GRAD_TOL}
    ok = not bad and elapsed < 120
    record_criterion(1, ok, f"{len(worst)} checks, max rel err {max(worst.values()):.2e} (< {GRAD_TOL:g}), {elapsed:.1f}s (< 120s)")
    assert not bad, bad
    assert elapsed < 120


def test_criterion_02_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for fam in FAMILIES:
        for pool in (1, 2, 4):
            for seed in range(20):
                rng = np.random.default_rng(seed)
                block = NonlocalBlock(4, spec=KernelSpec(fam), stages=2, pool=pool, rng=rng)
                x = rng.standard_normal((2, 4, 4, 4))
                worst = max(worst, float(np.abs(block(x).data - block.forward_naive(x)).max()))
                count += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 60
    record_criterion(2, ok, f"{count} cases, max |fast - naive| {worst:.2e} (< 1e-10), {elapsed:.1f}s (< 60s)")
    assert worst < 1e-10 and elapsed < 60


def test_criterion_03_matrix_form_identity():
    worst = 0.0
    for fam in ("dot", "gaussian", "fractional", "riesz", "log"):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            block = NonlocalBlock(4, spec=KernelSpec(fam), normalization="row", rng=rng)
            x = rng.standard_normal((2, 3, 3, 4))
            v_new, w_new = matrix_form_step(x, -x, block)
            omega = block.kernel(x)
            b1 = block.stage(x, x, omega, 0)
            b2 = block.stage(x, b1, omega, 1)
            worst = max(worst, float(np.abs(v_new - b1.data).max()), float(np.abs(-w_new - b2.data).max()))
    record_criterion(3, worst < 1e-12, f"max |V_new - B1|, |-W_new - B2| = {worst:.2e} (< 1e-12) over 5 families x 10 seeds")
    assert worst < 1e-12


def test_criterion_04_reversibility():
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        block = HamiltonianBlock(4, h=rng.uniform(0.01, 0.2), rng=rng)
        for bn in (block.bn1, block.bn2):
            bn.mode = "eval"
            bn.running_mean = rng.standard_normal(2) * 0.1
            bn.running_var = rng.random(2) + 0.5
        y, z = rng.standard_normal((2, 1, 4, 4, 2))
        y0, z0 = hamiltonian_step_inverse(*hamiltonian_step(y, z, block), block)
        worst = max(worst, float(np.abs(y0.data - y).max()), float(np.abs(z0.data - z).max()))
    record_criterion(4, worst < 1e-10, f"1000 blocks, max round-trip error {worst:.2e} (< 1e-10)")
    assert worst < 1e-10


def test_criterion_05_energy_decay():
    decays = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 33))
        omega = lab.random_symmetric_kernel(n, rng, density=rng.uniform(0.2, 1.0))
        traj = lab.simulate_diffusion(rng.standard_normal(n), omega, rng.uniform(0.05, 1.0) * lab.step_bound(omega), 200)
        decays += traj.within_bound and traj.decay_holds()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w = rng.uniform(0.1, 3.0)
        omega = np.array([[0.0, w], [w, 0.0]])
        dt = rng.uniform(0.1, 1.0) * lab.step_bound(omega)
        traj = lab.simulate_diffusion(np.array([1.5, -0.5]), omega, dt, 100)
        exact = np.array([lab.two_point_difference(2.0, w, dt, t) for t in range(101)])
        worst = max(worst, float(np.abs(traj.states[:, 0] - traj.states[:, 1] - exact).max()))
    ok = decays == 100 and worst < 1e-12
    record_criterion(5, ok, f"{decays}/100 kernels with nonincreasing L2 and variance, two-point error {worst:.2e} (< 1e-12)")
    assert decays == 100 and worst < 1e-12


def test_criterion_06_fourier_symbol():
    rows = []
    ok = True
    for s in (0.25, 0.5, 0.75):
        for xi in (1, 2):
            fine = lab.measure_symbol(512, s, xi)
            coarse = lab.measure_symbol(128, s, xi)
            good = fine.relative_error < 0.15 and fine.relative_error < coarse.relative_error
            ok &= good
            rows.append(f"s={s} xi={xi}: {fine.relative_error:.2%} (N=128 {coarse.relative_error:.2%})")
    record_criterion(6, ok, "; ".join(rows))
    assert ok


def test_criterion_07_constants():
    c_frac = operator_constant(2, 0.5, "fractional")
    c_riesz = operator_constant(2, 0.5, "riesz")
    target = 1 / (2 * math.pi)
    errs = (abs(c_frac - target), abs(c_riesz - target))
    gamma_err = abs(EULER_GAMMA - 0.5772156649)
    ok = max(errs) < 1e-10 and gamma_err < 1e-9
    record_criterion(7, ok, f"c(2,1/2)={c_frac:.12f}, c(2,-1/2)={c_riesz:.12f} (1/2pi={target:.12f}), gamma={EULER_GAMMA:.10f}")
    assert ok


# -- desk-scale training ------------------------------------------------------------

FOV = FieldOfViewConfig()


@pytest.fixture(scope="module")
def field_of_view():
    t0 = time.perf_counter()
    progress = lambda r: print(f"  {r.family} stages={r.stages} seed={r.seed}: test acc {r.final_test_acc:.3f} ({r.seconds:.0f}s)", flush=True)
    baseline = run_comparison(FOV, "none", on_run=progress)
    diffusion = run_comparison(FOV, "diffusion", stages=2, on_run=progress)
    return baseline, diffusion, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_08_field_of_view(field_of_view):
    baseline, diffusion, elapsed = field_of_view
    gap = 100 * (diffusion.median - baseline.median)
    ok = gap >= 3.0 and elapsed < 1800 and FOV.epochs <= 15
    accs = lambda c: ", ".join(f"{a:.3f}" for a in c.accuracies)
    record_criterion(
        8,
        ok,
        f"median test acc diffusion {diffusion.median:.3f} [{accs(diffusion)}] vs baseline {baseline.median:.3f} [{accs(baseline)}]: "
        f"+{gap:.1f} points (>= 3), {FOV.epochs} epochs, {elapsed / 60:.1f} min (< 30)",
    )
    assert gap >= 3.0
    assert elapsed < 1800


@pytest.mark.slow
def test_criterion_09_stage_damping(field_of_view):
    _, two, _ = field_of_view
    four = run_comparison(FOV, "diffusion", stages=4)
    gain = 100 * (four.median - two.median)
    accs = ", ".join(f"{a:.3f}" for a in four.accuracies)
    record_criterion(
        9,
        gain <= 1.0,
        f"median test acc stages=4 {four.median:.3f} [{accs}] vs stages=2 {two.median:.3f}: {gain:+.1f} points (<= +1)",
        logged_only=True,
    )


# -- cost model, spectra, formats ------------------------------------------------------


def test_criterion_10_cost_model():
    base_cfg = NetworkConfig(m=6, channels=(32, 64, 112))
    nl_cfg = NetworkConfig(m=6, channels=(32, 64, 112), nonlocal_family="diffusion")
    pools = (1, 2, 4, 6, 8, 12)
    sweep = pool_sweep(nl_cfg, (96, 96, 3), pools)
    k1 = sweep[1].kernel_flops
    exact = all(sweep[p].kernel_flops * p * p == k1 for p in pools)
    totals = [sweep[p].total_flops for p in pools]
    base96 = flop_estimate(base_cfg, (96, 96, 3)).total_flops
    monotone = all(b < a for a, b in zip(totals, totals[1:])) and all(t > base96 for t in totals)
    base = flop_estimate(base_cfg, (32, 32, 3))
    nl = flop_estimate(nl_cfg, (32, 32, 3))
    flops_ok = abs(base.total_flops - 159.6e6) / 159.6e6 < 0.15
    params_ok = abs(base.total_params - 0.50e6) / 0.50e6 < 0.10 and abs(nl.total_params - 0.56e6) / 0.56e6 < 0.10
    ok = exact and monotone and flops_ok and params_ok
    curve = ", ".join(f"{p}:{t / 1e6:.0f}M" for p, t in zip(pools, totals))
    record_criterion(
        10,
        ok,
        f"kernel 1/p^2 exact: {exact}; 96x96 curve {curve} -> baseline {base96 / 1e6:.0f}M; "
        f"Hamiltonian-74 {base.total_flops / 1e6:.1f}M (159.6M +-15%); params {base.total_params / 1e6:.3f}M / {nl.total_params / 1e6:.3f}M",
    )
    assert ok


def test_criterion_11_spectral_diagnostics():
    rng = np.random.default_rng(0)
    qf, imag, trace = 0.0, 0.0, 0.0
    for n in (2, 5, 16, 32, 64, 112):
        for _ in range(3):
            k = rng.standard_normal((n, n))
            qf = max(qf, quadratic_form_check(k, 200, rng))
            rep = analyze_matrix("k", k)
            imag = max(imag, rep.symmetric_max_imag)
            trace = max(trace, abs(complex(eigen(k).sum()) - np.trace(k)))
    ok = qf < 1e-10 and imag < 1e-10 and trace < 1e-8
    record_criterion(11, ok, f"quadratic form {qf:.1e} (< 1e-10), symmetric imag {imag:.1e} (< 1e-10), trace {trace:.1e} (< 1e-8), n up to 112")
    assert ok


def test_criterion_12_formats(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "cifar"
    root.mkdir()
    imgs = rng.integers(0, 256, size=(4, 32, 32, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, size=4)
    write_cifar_records(root / "data_batch_1.bin", imgs, labels)
    write_cifar_records(root / "test_batch.bin", imgs[:2], labels[:2])
    back, back_labels = read_cifar_records(root / "data_batch_1.bin")
    write_cifar_records(tmp_path / "again.bin", back, back_labels)
    cifar_ok = (
        np.array_equal(back, imgs)
        and np.array_equal(back_labels, labels)
        and (tmp_path / "again.bin").read_bytes() == (root / "data_batch_1.bin").read_bytes()
        and load_cifar10(root).x_train.shape == (4, 32, 32, 3)
    )

    cfg = NetworkConfig(m=2, channels=(4, 4, 8), input_conv_filters=4, in_channels=1, classes=2, nonlocal_family="fraclap", dtype="float32")
    net = build_network(cfg, seed=0, input_hw=(16, 16))
    opt = SGD()
    opt.velocity = {k: rng.standard_normal(p.shape).astype(np.float32) for k, p in net.parameters().items()}
    saved = save_checkpoint(tmp_path / "c.pidn", net, step=3, optimizer=opt)
    loaded = load_checkpoint(tmp_path / "c.pidn")
    ckpt_ok = saved.tensors.keys() == loaded.tensors.keys() and all(
        np.asarray(saved.tensors[k], dtype="<f4").tobytes() == loaded.tensors[k].tobytes() for k in saved.tensors
    )
    ckpt_ok &= all(opt.velocity[k].tobytes() == loaded.velocity[k].tobytes() for k in opt.velocity)

    def run(tag):
        data = longrange_dataset(SyntheticLongRangeSpec(image_size=16, min_separation=8), seed=7, train=40, test=20)
        data.x_train = data.x_train.astype(np.float32)
        data.x_test = data.x_test.astype(np.float32)
        train(build_network(cfg, seed=7, input_hw=(16, 16)), data, TrainConfig(epochs=2, batch=10, seed=7), out_dir=tmp_path / tag)
        return (tmp_path / tag / "metrics.csv").read_bytes()

    metrics_ok = run("a") == run("b")
    ok = cifar_ok and ckpt_ok and metrics_ok
    record_criterion(12, ok, f"CIFAR round trip {cifar_ok}, checkpoint bit-exact {ckpt_ok}, identical metrics.csv {metrics_ok}")
    assert ok

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pidenet import kernels as K
from pidenet import tensor as T
from pidenet.gradcheck import gradient_check
from pidenet.kernels import KernelSpec
from pidenet.special import EULER_GAMMA, fractional_constant, gamma_fn, operator_constant, riesz_constant
from pidenet.tensor import Tensor, parameter


@pytest.mark.parametrize(
    "x, expected",
    [(2.0, 1.0), (0.5, math.sqrt(math.pi)), (-0.5, -2 * math.sqrt(math.pi)), (5.0, 24.0), (1.5, math.sqrt(math.pi) / 2)],
)
def test_gamma_known_values(x, expected):
    assert abs(gamma_fn(x) - expected) < 1e-12 * max(1.0, abs(expected))


@given(st.floats(0.05, 30.0))
def test_gamma_matches_stdlib(x):
    assert math.isclose(gamma_fn(x), math.gamma(x), rel_tol=1e-12)


@given(st.floats(-4.95, -0.05).filter(lambda v: abs(v - round(v)) > 1e-3))
def test_gamma_reflection_matches_stdlib(x):
    assert math.isclose(gamma_fn(x), math.gamma(x), rel_tol=1e-10)


def test_gamma_poles():
    for x in (0.0, -1.0, -3.0):
        with pytest.raises(ValueError):
            gamma_fn(x)


def test_two_dimensional_half_order_constants():
    assert abs(fractional_constant(2, 0.5) - 1 / (2 * math.pi)) < 1e-10
    assert abs(riesz_constant(2, 0.5) - 1 / (2 * math.pi)) < 1e-10


def test_euler_gamma_value():
    assert abs(EULER_GAMMA - 0.5772156649) < 1e-9


def test_admissible_ranges():
    with pytest.raises(ValueError):
        KernelSpec("fractional", s=1.2)
    with pytest.raises(ValueError):
        KernelSpec("riesz", s=1.0, n=2)
    with pytest.raises(ValueError):
        KernelSpec("dot", lam=0.0)
    with pytest.raises(ValueError):
        KernelSpec("log", s=0.5, n=2)
    with pytest.raises(ValueError):
        operator_constant(0, 0.5, "fractional")
    assert KernelSpec("log").s == 1.0


def test_embed_identity_extension_copies_first_channel(rng):
    x = rng.standard_normal((3, 5, 2))
    out = K.embed(Tensor(x), Tensor(np.array([[1.0], [0.0]])))
    np.testing.assert_array_equal(out.data[..., 0], x[..., 0])


def test_zero_embedding_gives_zero_dot_kernel(rng):
    x = Tensor(rng.standard_normal((2, 6, 4)))
    th = K.embed(x, Tensor(np.zeros((4, 2))))
    assert np.all(K.kernel_values(th, th, KernelSpec("dot")).data == 0)


def test_embed_shape():
    assert K.embed(Tensor(np.ones((2, 36, 64))), Tensor(np.ones((64, 32)))).shape == (2, 36, 32)


def test_subsample_identity_and_counts(rng):
    x = rng.standard_normal((2, 6, 6, 3))
    np.testing.assert_array_equal(K.subsample_strips(Tensor(x), 1).data, x.reshape(2, 36, 3))
    assert K.subsample_strips(Tensor(x), 2).shape == (2, 9, 3)
    const = K.subsample_strips(Tensor(np.full((1, 6, 6, 2), 0.7)), 3).data
    assert np.all(const == 0.7)
    with pytest.raises(K.ShapeError):
        K.subsample_strips(Tensor(x), 7)


def test_dot_kernel_orthogonal_rows():
    theta = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    phi = Tensor(np.array([[[1.0, 0.0]]]))
    om = K.affinity(theta, phi, KernelSpec("dot", lam=1.0))
    np.testing.assert_array_equal(om.values.data[0, :, 0], [1.0, 0.0])


@pytest.mark.parametrize("family", ["fractional", "riesz", "log"])
def test_singular_families_safe_divide(family):
    theta = Tensor(np.array([[[0.3, -0.2], [1.0, 1.0]]]))
    om = K.kernel_values(theta, theta, KernelSpec(family))
    assert om.data[0, 0, 0] == 0.0 and om.data[0, 1, 1] == 0.0
    assert np.all(np.isfinite(om.data))


@given(st.floats(0.01, 10.0))
def test_log_kernel_at_unit_distance(lam):
    theta = Tensor(np.array([[[0.0, 0.0]]]))
    phi = Tensor(np.array([[[1.0, 0.0]]]))
    v = K.kernel_values(theta, phi, KernelSpec("log", lam=lam)).data[0, 0, 0]
    assert abs(v + 0.5772156649) < 1e-9


@given(st.integers(0, 10_000))
def test_gaussian_kernel_positive(seed):
    rng = np.random.default_rng(seed)
    th = Tensor(rng.standard_normal((1, 5, 3)))
    ph = Tensor(rng.standard_normal((1, 4, 3)))
    om = K.affinity(th, ph, KernelSpec("gaussian"))
    assert np.all(om.values.data > 0)


def test_comparison_side_larger_rejected():
    with pytest.raises(K.ShapeError):
        K.AffinityMatrix(Tensor(np.zeros((1, 2, 3))), 3.0)


@given(st.integers(0, 10_000))
def test_expanded_distances_match_direct(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 7, 3))
    b = rng.standard_normal((2, 4, 3))
    d2 = K.pairwise_sqdist(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(np.sqrt(d2), K.direct_distances(a, b), atol=1e-10)


@given(st.sampled_from(K.FAMILIES), st.integers(0, 10_000))
def test_tensor_kernel_matches_scalar_reference(family, seed):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(family)
    th = rng.standard_normal((1, 5, 3))
    ph = rng.standard_normal((1, 4, 3))
    fast = K.kernel_values(Tensor(th), Tensor(ph), spec).data
    dist = K.direct_distances(th, ph)
    dots = th @ ph.transpose(0, 2, 1)
    ref = np.vectorize(lambda d, p: K.kernel_entry(d, p, spec))(dist, dots)
    np.testing.assert_allclose(fast, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("family", K.FAMILIES)
def test_kernel_gradients(family, rng):
    th = parameter(rng.standard_normal((1, 5, 3)), name="theta")
    ph = parameter(rng.standard_normal((1, 3, 3)), name="phi")
    probe = rng.standard_normal((1, 5, 3))
    spec = KernelSpec(family)
    report = gradient_check(lambda: T.tsum(K.kernel_values(th, ph, spec) * probe), [th, ph])
    assert max(report.values()) < 1e-6, report

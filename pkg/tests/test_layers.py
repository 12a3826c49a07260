import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fieldconv import autodiff as ad, shapes
from fieldconv.errors import ShapeError
from fieldconv.intrinsic import compute_cache, gauge_transform
from fieldconv.operator import eval_filter
from fieldconv.layers import (MLP, EchoBlock, EchoConfig, FCResNetBlock, complex_linear, dropout, echo_descriptor,
                              global_mean_pool, gradient_lift, magnitude_readout, radial_relu, splat_kernel)
from conftest import cfield, pair_cache


def test_complex_linear_identity_rotation_and_gauge(rng):
    X = cfield(rng, (6, 3))
    assert np.array_equal(complex_linear(X, np.eye(3)).value, X)
    x1 = X[:, :1]
    assert np.allclose(complex_linear(x1, np.array([[1j]])).value, x1 * np.exp(1j * np.pi / 2))
    W = cfield(rng, (2, 3))
    ph = np.exp(-1j * rng.uniform(-3, 3, 6))[:, None]
    assert np.allclose(complex_linear(X * ph, W).value, ph * complex_linear(X, W).value, atol=1e-14)


def test_complex_linear_example():
    X = np.array([[1 + 1j, 2.0]])
    W = np.array([[1j, 0], [1, 1]])
    assert np.allclose(complex_linear(X, W).value, [[-1 + 1j, 3 + 1j]])
    with pytest.raises(ShapeError):
        complex_linear(X, np.ones((2, 3)))


def test_radial_relu_examples():
    X = np.array([[3 + 4j, 0.5j]])
    out = radial_relu(X, np.array([-1.0, -1.0])).value
    assert np.allclose(out, [[(3 + 4j) * 4 / 5, 0]])
    assert np.allclose(radial_relu(X, np.array([1.0, 0.0])).value, [[(3 + 4j) * 6 / 5, 0.5j]])


def test_radial_relu_reference_values(rng):
    X = cfield(rng, (5, 2))
    assert np.array_equal(radial_relu(X, np.zeros(2)).value, X)
    assert radial_relu(np.array([[1.0 + 0j]]), np.array([-2.0])).value[0, 0] == 0
    z = np.exp(1j * np.pi / 3)
    assert abs(radial_relu(np.array([[z]]), np.array([0.5])).value[0, 0] - 1.5 * z) <= 1e-15


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 0))
def test_radial_relu_keeps_phase(seed, b):
    rng = np.random.default_rng(seed)
    X = cfield(rng, (20, 1))
    out = radial_relu(X, np.array([b])).value
    assert np.allclose(np.abs(out), np.maximum(np.abs(X) + b, 0), atol=1e-12)
    alive = np.abs(out) > 1e-9
    assert np.allclose(out[alive] / np.abs(out[alive]), X[alive] / np.abs(X[alive]))


def test_readout_and_pool(rng):
    unit = np.exp(1j * rng.uniform(-3, 3, (7, 2)))
    assert np.allclose(global_mean_pool(magnitude_readout(unit)).value, 1.0)
    assert global_mean_pool(magnitude_readout(np.array([[0j], [2j]]))).value[0] == 1.0
    X = np.array([[3 + 4j, -2.0], [1j, 0]])
    assert np.allclose(magnitude_readout(X).value, [[5, 2], [1, 0]])
    assert np.allclose(global_mean_pool(np.array([[1.0, 2.0], [3.0, 6.0]])).value, [2, 4])


def test_dropout():
    x = np.ones((1000, 4))
    assert dropout(x, 0.5, training=False, seed=0) is x
    y = dropout(x, 0.25, training=True, seed=3)
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert abs(y.mean() - 1.0) < 0.05
    assert np.array_equal(y, dropout(x, 0.25, training=True, seed=3))
    assert dropout(x, 0.0, training=True, seed=1) is x
    with pytest.raises(ValueError):
        dropout(x, 1.0, training=True)


def test_dropout_is_unbiased():
    rng = np.random.default_rng(0)
    x = np.linspace(0.5, 2.0, 8)
    mean = np.mean([dropout(x, 0.5, training=True, seed=rng) for _ in range(10_000)], axis=0)
    assert np.abs(mean / x - 1).max() <= 0.02


@pytest.fixture(scope="module")
def flat():
    n = 21
    m = shapes.grid(n, n, 1.0 / (n - 1))
    cache = compute_cache(m, 0.16)
    xy = m.vertices[:, :2]
    interior = np.all((xy > 0.2) & (xy < 0.8), axis=1)
    return m, cache, interior


def _lift_params(n_nodes=3):
    f1 = np.ones((1, 1, n_nodes))
    f2 = np.ones((1, 1, n_nodes))
    return f1, f2, np.zeros(1)


def test_lift_constant_input_is_zero(flat):
    _, cache, _ = flat
    out = gradient_lift(np.full((cache.n_vertices, 1), 2.5), *_lift_params(), cache).value
    assert np.abs(out).max() == 0


def test_lift_points_along_gradient(flat):
    m, cache, interior = flat
    xi = m.vertices[:, :1].copy()
    out = gradient_lift(xi, *_lift_params(), cache).value[:, 0]
    expect = np.arctan2(cache.e2[:, 0], cache.e1[:, 0])  # +x in each local frame
    gap = np.angle(out[interior] * np.exp(-1j * expect[interior]))
    assert np.abs(gap).max() <= 1e-9


def test_lift_scales_quadratically(flat, rng):
    m, cache, _ = flat
    xi = rng.normal(size=(cache.n_vertices, 2))
    f1, f2 = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
    beta = rng.uniform(-3, 3, 3)
    a = gradient_lift(xi, f1, f2, beta, cache).value
    b = gradient_lift(3.0 * xi, f1, f2, beta, cache).value
    assert np.allclose(b, 9.0 * a, rtol=1e-12, atol=1e-14)


def test_lift_gauge(ellipsoid_cache, rng):
    c = ellipsoid_cache
    alpha = rng.uniform(-np.pi, np.pi, c.n_vertices)
    xi = rng.normal(size=(c.n_vertices, 2))
    f1, f2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    beta = rng.uniform(-3, 3, 3)
    a = gradient_lift(xi, f1, f2, beta, c).value
    b = gradient_lift(xi, f1, f2, beta, gauge_transform(c, alpha)).value
    assert np.abs(b - np.exp(-1j * alpha)[:, None] * a).max() <= 1e-10


def test_resnet_block_identity_with_zero_filters(small_cache, rng):
    _, cache = small_cache
    blk = FCResNetBlock(3, 4, 2, rng)
    blk.conv2.coeffs.value[:] = 0
    X = cfield(rng, (cache.n_vertices, 3))
    assert np.array_equal(blk(X, cache).value, X)


def test_resnet_block_single_pair_by_hand():
    cache = pair_cache(w=0.5, r=0.1, theta_qp=0.7, phi_pq=-0.4)
    rng = np.random.default_rng(3)
    blk = FCResNetBlock(1, 3, 1, rng)
    blk.relu1.b.value[:] = [-0.05]
    blk.relu2.b.value[:] = [0.2]
    X = np.array([[0.3 - 0.8j], [1.1 + 0.2j]])

    def conv(Y, coeffs):
        # the one-term sum written out: w rho e^{i(phi_q + phi_pq)} f(r e^{i(theta_qp - phi_q)})
        out = np.zeros(2, complex)
        for p, q in ((0, 1), (1, 0)):
            y = Y[q]
            z = 0.1 * np.exp(1j * (0.7 - np.angle(y)))
            out[p] = 0.5 * y * np.exp(-0.4j) * eval_filter(coeffs[0, 0], z, cache.epsilon)
        return out

    def relu(y, b):
        return np.maximum(np.abs(y) + b, 0) * np.exp(1j * np.angle(y))

    h = relu(conv(X[:, 0], blk.conv1.coeffs.value), -0.05)
    expect = relu(conv(h, blk.conv2.coeffs.value), 0.2) + X[:, 0]
    assert np.abs(blk(X, cache).value[:, 0] - expect).max() <= 1e-12


def test_resnet_block_gauge(ellipsoid_cache, rng):
    c = ellipsoid_cache
    alpha = rng.uniform(-np.pi, np.pi, c.n_vertices)
    ph = np.exp(-1j * alpha)[:, None]
    blk = FCResNetBlock(2, 3, 2, rng)
    blk.relu1.b.value[:] = [-0.2, 0.1]
    X = cfield(rng, (c.n_vertices, 2))
    a, b = blk(X, c).value, blk(X * ph, gauge_transform(c, alpha)).value
    assert np.abs(b - ph * a).max() <= 1e-10


def test_splat_kernel_is_c1():
    k, dk = splat_kernel(np.array([0.0, 2.0 - 1e-9, 2.0, 5.0]))
    assert k[0] == pytest.approx(1.0)
    assert abs(k[1]) < 1e-9 and abs(dk[1]) < 1e-8
    assert k[2] == 0 and k[3] == 0 and dk[3] == 0
    t = np.linspace(0.1, 1.9, 7)
    h = 1e-6
    num = (splat_kernel(t + h)[0] - splat_kernel(t - h)[0]) / (2 * h)
    assert np.allclose(num, splat_kernel(t)[1], atol=1e-7)


def test_echo_config_layouts():
    assert EchoConfig.from_samples(32, 33).width == 1056
    cfg = EchoConfig.from_samples(12, 13)
    assert (cfg.rings, cfg.sectors, cfg.width) == (3, 4, 156)
    assert len(cfg.centers()) == 13
    with pytest.raises(ValueError):
        EchoConfig.from_samples(4, 1)


def test_echo_zero_input(small_cache):
    _, cache = small_cache
    cfg = EchoConfig.from_samples(2, 9)
    d = echo_descriptor(np.zeros((cache.n_vertices, 2)), cache, cfg).value
    assert d.shape == (cache.n_vertices, 2, 9) and not d.any()


def test_echo_single_vote_on_a_bin_center():
    # neighbor at ring 1, sector 1 of a 1 x 4 grid; a vote weighted w rho
    cache = pair_cache(w=0.5, r=0.2, theta_qp=np.pi / 2, epsilon=0.2)
    cfg = EchoConfig(1, 1, 4, sigma=0.2)
    X = np.array([[1.0 + 0j], [1.0 + 0j]])
    d = echo_descriptor(X, cache, cfg).value[0, 0]
    assert d[2] == pytest.approx(0.5, abs=1e-15)
    assert np.abs(np.delete(d, 2)).max() == 0


def test_echo_single_vote_lands_in_its_bin(small_cache):
    _, cache = small_cache
    cfg = EchoConfig(1, 2, 4)
    X = np.zeros((cache.n_vertices, 1), complex)
    q = 5
    X[q] = 2.0
    d = echo_descriptor(X, cache, cfg).value[:, 0]
    centers = cfg.centers()
    for k in np.nonzero(cache.nbr == q)[0]:
        p = cache.center[k]
        z = cache.r[k] * cfg.rings / cache.epsilon * np.exp(1j * cache.theta_qp[k])
        nearest = np.argmin(np.abs(centers - z))
        assert d[p].argmax() == nearest
        assert d[p].max() <= cache.w[k] * 2.0 + 1e-15
    assert (d >= 0).all()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_echo_gauge_invariant(ellipsoid_cache, seed):
    rng = np.random.default_rng(seed)
    c = ellipsoid_cache
    alpha = rng.uniform(-np.pi, np.pi, c.n_vertices)
    X = cfield(rng, (c.n_vertices, 2))
    cfg = EchoConfig.from_samples(2, 13)
    a = echo_descriptor(X, c, cfg).value
    b = echo_descriptor(X * np.exp(-1j * alpha)[:, None], gauge_transform(c, alpha), cfg).value
    assert np.abs(a - b).max() <= 1e-9


def test_echo_block_widths(small_cache, rng):
    _, cache = small_cache
    cfg = EchoConfig.from_samples(12, 13)
    blk = EchoBlock(4, cfg, (124, 64, 32), 3, 1, rng)
    assert [l.W.value.shape for l in blk.mlp.layers] == [(124, 156), (64, 124), (32, 64)]
    assert blk(cfield(rng, (cache.n_vertices, 4)), cache).shape == (cache.n_vertices, 32)


def test_mlp_can_be_identity(rng):
    mlp = MLP([3, 3], rng)
    mlp.layers[0].W.value[:] = np.eye(3)
    x = rng.normal(size=(5, 3))
    assert np.array_equal(mlp(x).value, x)


def test_modules_tape_parameters(small_cache, rng):
    _, cache = small_cache
    blk = FCResNetBlock(2, 3, 1, rng)
    names = [n for n, _ in blk.named_parameters()]
    assert names == ["conv1.coeffs", "conv1.offsets", "relu1.b", "conv2.coeffs", "conv2.offsets", "relu2.b"]
    assert isinstance(blk(cfield(rng, (cache.n_vertices, 2)), cache), ad.Tensor)

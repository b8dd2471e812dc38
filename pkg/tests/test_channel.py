import numpy as np
import pytest

from robust_rzf.channel import dump_draw, load_draw, sample_channel, sqrt_psd
from robust_rzf.scenario import make_scenario, table_one


def test_perfect_csit_estimates_equal_truth():
    s = make_scenario(3, 2, 4, power=1.0, sigma=0.0, rho=0.3)
    d = sample_channel(s, np.random.default_rng(0))
    for j in range(3):
        np.testing.assert_array_equal(d.h_hat[j], d.h_true)


def test_centralized_estimates_identical():
    s = make_scenario(3, 2, 4, power=1.0, sigma=0.4, rho=1.0)
    d = sample_channel(s, np.random.default_rng(1))
    np.testing.assert_allclose(d.h_hat[1], d.h_hat[0], atol=1e-14)
    np.testing.assert_allclose(d.h_hat[2], d.h_hat[0], atol=1e-14)


def test_reconstruction_from_stored_variables():
    s = make_scenario(2, 3, 4, power=1.0, sigma2=[0.1, 0.3], rho=0.5, theta="exponential", theta_r=0.6)
    d = sample_channel(s, np.random.default_rng(2))
    m = s.m_total
    h = np.sqrt(m) * np.einsum("kab,kb->ka", s.theta_sqrt, d.z)
    np.testing.assert_allclose(d.h_true, h.conj(), atol=1e-13)
    delta = d.errors(s.theta_sqrt)
    for j in range(2):
        sig = s.sigma[j][:, None]
        est = np.sqrt(1 - sig**2) * h + sig * delta[j]
        np.testing.assert_allclose(d.h_hat[j], est.conj(), atol=1e-13)


def test_determinism():
    s = table_one(k_users=6)
    a = sample_channel(s, np.random.default_rng(5))
    b = sample_channel(s, np.random.default_rng(5))
    for x, y in zip((a.h_true, a.h_hat, a.z, a.q), (b.h_true, b.h_hat, b.z, b.q)):
        np.testing.assert_array_equal(x, y)


def test_error_cross_correlation_single_user():
    # one user, M = 10000: per-antenna sample correlation of the two error vectors
    s = make_scenario(2, 5000, 1, power=1.0, sigma=0.5, rho=0.81)
    d = sample_channel(s, np.random.default_rng(3))
    q1, q2 = d.q[0, 0], d.q[1, 0]
    m = s.m_total
    prod = m * q1 * q2.conj()
    est = prod.mean().real
    se = prod.real.std(ddof=1) / np.sqrt(m)
    assert abs(est - 0.81) <= 3 * se
    assert abs((m * np.abs(q1) ** 2).mean() - 1.0) < 0.05


def test_channel_second_moment():
    # mean of ||h_k||^2 / M equals tr(theta_k)/M = 1 for normalized theta
    s = make_scenario(2, 16, 8, power=1.0, sigma=0.3, rho=0.4, theta="exponential", theta_r=0.5)
    rng = np.random.default_rng(11)
    vals = np.array([np.sum(np.abs(sample_channel(s, rng).h_true) ** 2, axis=1) / s.m_total for _ in range(2000)])
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0])
    target = np.trace(s.theta, axis1=1, axis2=2).real / s.m_total
    assert np.all(np.abs(mean - target) <= 5 * se)


def test_sqrt_psd_examples(rng):
    np.testing.assert_allclose(sqrt_psd(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    b = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    a = b @ b.conj().T
    root = sqrt_psd(a)
    assert np.linalg.norm(root @ root - a) / np.linalg.norm(a) <= 1e-10
    np.testing.assert_allclose(root, root.conj().T, atol=1e-13)
    assert np.linalg.eigvalsh(root).min() >= -1e-10


def test_sqrt_psd_rejects_bad_input():
    with pytest.raises(ValueError, match="Hermitian"):
        sqrt_psd(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="PSD"):
        sqrt_psd(np.diag([1.0, -0.1]))


@pytest.mark.parametrize("dtype", [np.complex128, np.complex64])
def test_draw_dump_roundtrip(tmp_path, dtype):
    s = make_scenario(2, 3, 4, power=1.0, sigma=0.3, rho=0.5)
    d = sample_channel(s, np.random.default_rng(4))
    path = tmp_path / "draw.bin"
    dump_draw(d, path, dtype=dtype)
    back = load_draw(path)
    tol = 0 if dtype is np.complex128 else 1e-6
    for x, y in zip((d.h_true, d.h_hat, d.z, d.q), (back.h_true, back.h_hat, back.z, back.q)):
        np.testing.assert_allclose(y, x, atol=tol)


def test_load_draw_rejects_other_files(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"not a draw")
    with pytest.raises(ValueError):
        load_draw(path)

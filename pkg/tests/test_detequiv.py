import logging
import math

import numpy as np
import pytest

import oracles
from robust_rzf import detequiv
from robust_rzf.detequiv import (
    DetEquivReport,
    GammaCache,
    TheoremTerms,
    closed_form_m_iso,
    fixed_point_map,
    iso_specializations,
    mu_from_per_tx_power,
    sinr_det_equiv,
    solve_fixed_point,
    theorem_terms,
    write_report_csv,
)
from robust_rzf.exceptions import FixedPointError, PowerConstraintError, SingularSystemError, SpecializationError
from robust_rzf.precoding import PrecoderParams, monte_carlo
from robust_rzf.scenario import csit_coefficients, make_scenario, table_one

GOLDEN = (math.sqrt(5) - 1) / 2


def iso_theta(m_total, k_users):
    return np.broadcast_to(np.eye(m_total, dtype=complex), (k_users, m_total, m_total))


# -- fixed point --------------------------------------------------------------


def test_closed_form_golden_ratio():
    assert closed_form_m_iso(1.0, 1.0) == pytest.approx(GOLDEN, abs=1e-15)
    assert closed_form_m_iso(1e12, 1.0) < 1e-11


@pytest.mark.parametrize("alpha", [0.01, 0.1, 1.0, 10.0])
@pytest.mark.parametrize("beta", [1, 2, 4])
def test_fixed_point_matches_closed_form(alpha, beta):
    k_users = 4
    sol = solve_fixed_point(iso_theta(beta * k_users, k_users), alpha)
    assert sol.residual <= 1e-12
    np.testing.assert_allclose(sol.m, closed_form_m_iso(alpha, beta), rtol=0, atol=1e-12)
    m = sol.m[0]
    assert m == pytest.approx(1.0 / (alpha + 1.0 / (beta * (1.0 + m))), abs=1e-12)


def test_fixed_point_general_theta(rng):
    s = make_scenario(2, 4, 6, power=1.0, theta="exponential", theta_r=rng.uniform(0.2, 0.8, 6))
    theta = np.array(s.theta)
    sol = solve_fixed_point(theta, 0.3)
    ref, _ = oracles.fixed_point(theta, 0.3)
    np.testing.assert_allclose(sol.m, ref, atol=1e-11)
    assert np.all(sol.m > 0)
    # Q_o is the inverse rebuilt from the returned m
    inner = np.einsum("k,kab->ab", 1.0 / (s.m_total * (1 + sol.m)), theta) + 0.3 * np.eye(s.m_total)
    np.testing.assert_allclose(sol.q_o @ inner, np.eye(s.m_total), atol=1e-10)
    new, _ = fixed_point_map(theta, 0.3, sol.m)
    assert np.abs(new - sol.m).max() <= 1e-12


def test_fixed_point_large_alpha():
    s = make_scenario(1, 6, 3, power=1.0, theta="exponential", theta_r=0.5)
    sol = solve_fixed_point(np.array(s.theta), 1e6)
    approx = np.trace(s.theta, axis1=1, axis2=2).real / (s.m_total * 1e6)
    np.testing.assert_allclose(sol.m, approx, rtol=1e-2)


def test_fixed_point_small_alpha_square_system():
    # plain iteration needs > 1e4 steps here; the contraction is weak, so the
    # error exceeds the stopping residual by the factor 1/(1 - rate)
    sol = solve_fixed_point(iso_theta(6, 6), 1e-6)
    assert sol.residual <= 1e-12 * sol.m.max()
    assert sol.m[0] == pytest.approx(closed_form_m_iso(1e-6, 1.0), rel=1e-9)


def test_fixed_point_reports_failure():
    with pytest.raises(FixedPointError) as info:
        solve_fixed_point(iso_theta(4, 4), 1e-3, max_iter=3, accelerate=False)
    assert info.value.iterations == 3
    assert info.value.residual > 0
    with pytest.raises(ValueError):
        solve_fixed_point(iso_theta(4, 4), 0.0)


# -- Gamma functional ---------------------------------------------------------


def _cache(s, alpha):
    fps = [solve_fixed_point(np.array(s.theta), a) for a in np.broadcast_to(alpha, (s.n,))]
    return GammaCache(s.theta, fps, csit_coefficients(s), s.rho)


def test_gamma_isotropic_identity_values():
    s = table_one("centralized", "symmetric", k_users=12)
    cache = _cache(s, 0.2)
    m = closed_form_m_iso(0.2, 1.0)
    expected = m**2 / ((1 + m) ** 2 - m**2)
    eye = np.eye(s.m_total)
    for j in range(s.n):
        assert cache.gamma(j, j, eye).real == pytest.approx(expected, rel=1e-10)
        sel = oracles.selector(s.n, s.m_tx, j)
        assert cache.gamma(j, j, sel).real == pytest.approx(expected / s.n, rel=1e-10)


def test_gamma_cross_pair_isotropic_closed_form():
    s = table_one("dcsit", "asymmetric", k_users=12)
    alpha = np.array([0.05, 0.2, 0.7])
    cache = _cache(s, alpha)
    m = closed_form_m_iso(alpha, 1.0)
    c = csit_coefficients(s)
    for j, jp in [(0, 1), (1, 2), (2, 0)]:
        w = np.sqrt(c.c0[j] * c.c0[jp]) + np.sqrt(c.c1[j] * c.c1[jp]) * s.rho[j, jp]
        ratio = (1 + m[j]) * (1 + m[jp]) / (m[j] * m[jp])
        expected = (w.sum() / s.m_total) / (ratio - (w**2).sum() / s.m_total)
        assert cache.gamma(j, jp, np.eye(s.m_total)).real == pytest.approx(expected, rel=1e-10)


def test_gamma_matches_oracle_general(rng):
    s = make_scenario(
        2, 3, 4, power=5.0, sigma2=rng.uniform(0, 0.5, (2, 4)), rho=0.6, theta="exponential", theta_r=rng.uniform(0.1, 0.8, 4)
    )
    alpha = np.array([0.2, 0.5])
    cache = _cache(s, alpha)
    theta = np.array(s.theta)
    c = csit_coefficients(s)
    fps = [oracles.fixed_point(theta, a) for a in alpha]
    x = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    for j in range(2):
        for jp in range(2):
            w = np.sqrt(c.c0[j] * c.c0[jp]) + np.sqrt(c.c1[j] * c.c1[jp]) * s.rho[j, jp]
            ref = oracles.Gamma(theta, fps[j][0], fps[j][1], fps[jp][0], fps[jp][1], w)
            pair = cache.pair(j, jp)
            np.testing.assert_allclose(pair.gamma_theta, ref.gamma_theta, rtol=1e-9)
            assert pair(x) == pytest.approx(ref(x), rel=1e-9)
            assert np.abs(pair.a_matrix @ pair.gamma_theta - pair.b_vector).max() <= 1e-10 * np.abs(pair.b_vector).max()
            # consistency: Gamma(theta_k) through the kernel equals the solved vector
            for k in range(4):
                assert pair(theta[k]) == pytest.approx(pair.gamma_theta[k], rel=1e-9)


def test_gamma_conjugate_symmetry(rng):
    s = make_scenario(3, 2, 5, power=2.0, sigma2=rng.uniform(0, 0.5, (3, 5)), rho=0.4, theta="exponential", theta_r=0.5)
    cache = _cache(s, np.array([0.1, 0.3, 0.9]))
    for _ in range(5):
        x = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        for j in range(3):
            for jp in range(3):
                assert cache.gamma(j, jp, x) == pytest.approx(np.conj(cache.gamma(jp, j, x.conj().T)), rel=1e-9)


def test_singular_system_is_reported(monkeypatch):
    s = table_one("dcsit", k_users=6)
    monkeypatch.setattr(detequiv, "MAX_CONDITION", 1.0)
    with pytest.raises(SingularSystemError) as info:
        _cache(s, 0.1).pair(0, 1)
    assert info.value.condition >= 1.0


# -- SINR equivalents ---------------------------------------------------------


def test_general_path_matches_oracle(rng):
    s = make_scenario(
        3, 2, 5, power=20.0, sigma2=rng.uniform(0, 0.5, (3, 5)), rho=0.7, theta="exponential", theta_r=rng.uniform(0.1, 0.8, 5)
    )
    alpha = np.array([0.1, 0.3, 0.05])
    terms = theorem_terms(s, alpha)
    mu = mu_from_per_tx_power(s.per_tx_power, s, terms=terms)
    rep = sinr_det_equiv(s, PrecoderParams(alpha, mu), terms=terms)
    ref = oracles.det_equiv(s, alpha, mu)
    np.testing.assert_allclose(rep.sinr_o, ref["sinr"], rtol=1e-9)
    np.testing.assert_allclose(rep.i_o, ref["interference"], rtol=1e-9)
    np.testing.assert_allclose(terms.power_weights, ref["weights"], rtol=1e-10)
    np.testing.assert_allclose(rep.phi, ref["phi"], rtol=1e-10)


def test_fast_path_matches_general_path():
    s = table_one("dcsit", "asymmetric", k_users=12)
    alpha = np.array([0.05, 0.2, 0.7])
    fast = theorem_terms(s, alpha)
    slow = theorem_terms(s, alpha, force_general=True)
    assert fast.method == "isotropic" and slow.method == "general"
    mu = np.array([1.1, 0.9, 0.95])
    np.testing.assert_allclose(fast.evaluate(mu)[0], slow.evaluate(mu)[0], rtol=1e-10)
    np.testing.assert_allclose(fast.power_weights, slow.power_weights, rtol=1e-10)


@pytest.mark.parametrize("csit", ["fully_distributed", "dcsit", "centralized"])
@pytest.mark.parametrize("accuracy", ["symmetric", "asymmetric"])
def test_dcsi_specialization_matches_general(csit, accuracy):
    s = table_one(csit, accuracy, k_users=12)
    alpha = np.array([0.02, 0.2, 0.9])
    ref = iso_specializations("dcsi", s, PrecoderParams(alpha, np.ones(3)))
    gen = DetEquivReport.from_terms(theorem_terms(s, alpha, force_general=True), np.ones(3))
    np.testing.assert_allclose(gen.sinr_o, ref.sinr_o, rtol=1e-9)
    np.testing.assert_allclose(gen.i_o, ref.i_o, rtol=1e-9)
    np.testing.assert_allclose(gen.psi_o, ref.psi_o, rtol=1e-10)


def test_nested_specializations_agree():
    s = table_one("centralized", "symmetric", k_users=12)
    params = PrecoderParams(np.full(3, 0.3), np.ones(3))
    a = iso_specializations("dcsi", s, params)
    b = iso_specializations("centralized", s, params)
    np.testing.assert_allclose(a.sinr_o, b.sinr_o, rtol=1e-12)
    np.testing.assert_allclose(a.i_o, b.i_o, rtol=1e-12)
    s0 = table_one("fully_distributed", "asymmetric", k_users=12)
    c = iso_specializations("fully_distributed", s0, params)
    d = iso_specializations("dcsi", s0, params)
    np.testing.assert_allclose(c.sinr_o, d.sinr_o, rtol=1e-12)


def test_specialization_preconditions():
    s = table_one("dcsit", "asymmetric", k_users=6)
    params = PrecoderParams(np.full(3, 0.3), np.ones(3))
    with pytest.raises(SpecializationError):
        iso_specializations("centralized", s, params)
    with pytest.raises(SpecializationError):
        iso_specializations("fully_distributed", s, params)
    with pytest.raises(SpecializationError):
        iso_specializations("dcsi", s, PrecoderParams(np.full(3, 0.3), np.array([1.0, 1.0, 2.0])))
    with pytest.raises(SpecializationError):
        iso_specializations("nope", s, params)
    corr = make_scenario(1, 4, 2, power=1.0, theta="exponential", theta_r=0.4)
    with pytest.raises(SpecializationError):
        iso_specializations("dcsi", corr, PrecoderParams([0.3], [1.0]))


def test_uninformative_tx_contributes_no_signal():
    s = make_scenario(3, 4, 12, power=100.0, sigma=[0.2, 1.0, 0.4], rho=0.5)
    terms = theorem_terms(s, 0.3, force_general=True)
    np.testing.assert_array_equal(terms.signal[:, 1], 0.0)
    assert np.all(terms.signal[:, [0, 2]] > 0)
    fast = theorem_terms(s, 0.3)
    np.testing.assert_array_equal(fast.signal[:, 1], 0.0)


def test_zero_forcing_limit():
    s = make_scenario(2, 8, 8, power=100.0, sigma=0.0, rho=1.0)
    rep = DetEquivReport.from_terms(theorem_terms(s, 1e-6), np.ones(2))
    assert rep.i_o.max() <= 1e-6
    rep_g = DetEquivReport.from_terms(theorem_terms(s, 1e-6, force_general=True), np.ones(2))
    assert rep_g.i_o.max() <= 1e-6


def test_report_invariants():
    s = table_one("dcsit", "asymmetric", k_users=12)
    rep = sinr_det_equiv(s, PrecoderParams(np.full(3, 0.2), np.ones(3)))
    assert np.all(rep.sinr_o >= 0) and np.all(rep.i_o >= 0)
    assert rep.sum_rate_o == pytest.approx(np.log2(1 + rep.sinr_o).sum(), rel=1e-14)


def test_mu_constraint_enforced():
    s = table_one("dcsit", "asymmetric", k_users=12)
    with pytest.raises(PowerConstraintError):
        sinr_det_equiv(s, PrecoderParams(np.full(3, 0.2), np.full(3, 1.1)))


def test_mu_from_budgets():
    s = table_one("dcsit", "asymmetric", k_users=12)
    np.testing.assert_allclose(mu_from_per_tx_power(s.per_tx_power, s, np.full(3, 0.2)), 1.0, rtol=1e-12)
    p = 100.0 * np.array([0.5, 0.25, 0.25])
    mu = mu_from_per_tx_power(p, s, np.full(3, 0.2))
    np.testing.assert_allclose(mu, np.sqrt([1.5, 0.75, 0.75]), rtol=1e-12)
    s1 = make_scenario(1, 6, 6, power=10.0, sigma=0.3, theta="exponential", theta_r=0.5)
    assert mu_from_per_tx_power([10.0], s1, 0.1)[0] == pytest.approx(1.0, abs=1e-12)
    corr = make_scenario(3, 2, 5, power=6.0, sigma=0.3, rho=0.2, theta="exponential", theta_r=0.6)
    terms = theorem_terms(corr, np.array([0.1, 0.2, 0.3]))
    mu = mu_from_per_tx_power([1.0, 2.0, 3.0], corr, terms=terms)
    assert np.dot(terms.power_weights, mu**2) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        mu_from_per_tx_power([-1.0, 51.0, 50.0], s, 0.2)


def test_negative_interference_is_clamped(caplog):
    terms = TheoremTerms(
        power_total=1.0,
        alpha=np.ones(1),
        m=np.ones((1, 2)),
        phi=np.ones((1, 2)),
        gamma_identity=np.ones(1),
        gamma_block=np.ones(1),
        signal=np.ones((2, 1)),
        interference=np.array([[[-1e-6]], [[1.0]]]),
        method="test",
    )
    with caplog.at_level(logging.WARNING):
        _, interference = terms.evaluate(np.ones(1))
    assert interference[0] == 0.0
    assert "clamped" in caplog.text


def test_report_csv(tmp_path):
    s = table_one("dcsit", "asymmetric", k_users=6)
    rep = sinr_det_equiv(s, PrecoderParams(np.full(3, 0.2), np.ones(3)))
    path = tmp_path / "r.csv"
    write_report_csv(rep, path, {"scenario_hash": s.digest()})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# alpha:")
    assert any(line == f"# scenario_hash: {s.digest()}" for line in lines)
    body = [line for line in lines if not line.startswith("#")]
    assert body[0] == "k,sinr_o,i_o"
    assert len(body) == 1 + s.k_users


def test_mc_agreement_improves_with_size():
    devs = []
    for m in (8, 16, 32, 64):
        s = make_scenario(2, m // 2, m, power=10.0, sigma2=0.1, rho=0.5)
        rep = DetEquivReport.from_terms(theorem_terms(s, 0.1), np.ones(2))
        est = monte_carlo(s, PrecoderParams(np.full(2, 0.1), np.ones(2)), 4000 // m, seed=5)
        devs.append(abs(rep.sinr_o.mean() - est.per_user_sinr_mean.mean()))
    assert all(a > b for a, b in zip(devs, devs[1:])), devs

"""Shared test helpers."""

import numpy as np

from robust_rzf.scenario import make_scenario


def random_scenario(rng, *, n_max=4, k_max=16, theta=None):
    """Random valid scenario with a PSD equicorrelated rho and random sigma grid."""
    n = int(rng.integers(1, n_max + 1))
    k_users = int(rng.integers(2, k_max + 1))
    m_tx = int(np.ceil(k_users / n)) + int(rng.integers(0, 3))
    sigma2 = rng.uniform(0.0, 0.6, size=(n, k_users))
    rho = float(rng.uniform(0.0, 1.0))
    power_db = float(rng.uniform(0.0, 25.0))
    weights = rng.uniform(0.5, 1.5, size=n)
    power = 10 ** (power_db / 10)
    per_tx = power * weights / weights.sum()
    kind = theta or ("exponential" if rng.random() < 0.5 else "identity")
    kwargs = {}
    if kind == "exponential":
        kwargs = dict(theta="exponential", theta_r=rng.uniform(0.1, 0.7, size=k_users))
    return make_scenario(
        n, m_tx, k_users, power=power, sigma2=sigma2, rho=rho, per_tx_power=per_tx, seed=int(rng.integers(1 << 30)), **kwargs
    )

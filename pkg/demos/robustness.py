"""Compare the five precoder designs on the asymmetric D-CSIT setting.

Prints the deterministic sum rate of each design while sweeping the
cross-TX error correlation and then the total power. A short Monte-Carlo
check of the best design closes the run.

    python demos/robustness.py
"""

import numpy as np

from robust_rzf.experiments import ALGORITHM_LABELS, ALGORITHMS, evaluate_algorithms, with_power, with_rho
from robust_rzf.precoding import PrecoderParams, monte_carlo
from robust_rzf.scenario import table_one


def table(title, name, values, variant, base):
    print(f"\n{title}")
    print(f"{name:>6} " + " ".join(f"{ALGORITHM_LABELS[a]:>20}" for a in ALGORITHMS))
    for v in values:
        res = evaluate_algorithms(variant(base, v))
        print(f"{v:6.2f} " + " ".join(f"{res[a][2]:20.3f}" for a in ALGORITHMS))


def main():
    base = table_one("dcsit", "asymmetric")
    table("sum rate vs error correlation (P = 20 dB)", "rho", [0.0, 0.5, 0.81, 1.0], with_rho, base)
    table("sum rate vs total power (rho = 0.81)", "P_dB", [0.0, 10.0, 20.0, 30.0], with_power, base)

    res = evaluate_algorithms(base)
    alpha, mu, det = res["vec_opt"]
    est = monte_carlo(base, PrecoderParams(alpha, mu), 200, seed=1)
    print(f"\n(alpha*, mu*): alpha = {np.round(alpha, 4)}, mu = {np.round(mu, 4)}")
    print(f"deterministic {det:.3f}, simulated {est.sum_rate:.3f} +/- {est.std_error:.3f} bit/s/Hz")


if __name__ == "__main__":
    main()

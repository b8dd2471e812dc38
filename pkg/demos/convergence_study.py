"""How fast the deterministic equivalent approaches the simulated sum rate.

Built-in symmetric accuracy (sigma2 = 0.1), alpha = 1/(beta P), equal power, beta = 1.
The relative deviation shrinks roughly like 1/K, and faster when the CSIT
is more centralized.

    python demos/convergence_study.py [trials]
"""

import sys

from robust_rzf.experiments import convergence_rows
from robust_rzf.scenario import table_one


def main(trials=300):
    rows = convergence_rows(table_one("dcsit", "symmetric"), [6, 12, 18, 24, 30, 60], trials, seed=0)
    print(f"{'K':>4} {'CSIT':>18} {'det':>8} {'MC':>8} {'stderr':>7} {'rel dev':>8}")
    for k, label, _, det, mc, se, _, rel in rows:
        print(f"{k:>4} {label:>18} {det:8.3f} {mc:8.3f} {se:7.3f} {rel:8.3%}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)

"""Sweeps over correlation, power and system size, written as CSV.

Every sweep point is rebuilt from scratch (fixed points, Gamma caches and
optimizers), so a point's result depends only on its own parameters and the
seed. Output CSVs start with a ``#`` metadata block that identifies the
scenario, seed, package version and flags.
"""

import csv
import io
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .detequiv import mu_from_per_tx_power, theorem_terms
from .optimizer import joint_optimize, naive_alphas, optimize_common_alpha, optimize_per_tx_alpha
from .precoding import PrecoderParams, monte_carlo
from .scenario import TABLE_ONE_RHO, db_to_linear

__all__ = [
    "ALGORITHMS",
    "ExperimentSpec",
    "evaluate_algorithms",
    "run_sweep_rho",
    "run_sweep_power",
    "run_convergence_study",
    "write_csv",
    "metadata",
    "with_rho",
    "with_power",
    "with_users",
]

ALGORITHMS = ("naive_eq", "same_eq", "vec_eq", "same_opt", "vec_opt")
ALGORITHM_LABELS = {
    "naive_eq": "(alpha_naive, mu_eq)",
    "same_eq": "(alpha_same*, mu_eq)",
    "vec_eq": "(alpha*, mu_eq)",
    "same_opt": "(alpha_same*, mu*)",
    "vec_opt": "(alpha*, mu*)",
}
SWEEP_VARS = ("rho", "power_db", "k_users")


@dataclass
class ExperimentSpec:
    """One batch experiment.

    ``start``/``stop``/``steps`` describe an inclusive linear grid of the
    sweep variable. ``monte_carlo`` adds simulated rates to the rho and
    power sweeps; the convergence study always simulates. ``warm_start``
    runs rho and power sweep points in order and offers each point's
    regularization search the previous point's optimum as a candidate.
    """

    scenario: object
    command: str = "sweep"
    var: str = "rho"
    start: float = 0.0
    stop: float = 1.0
    steps: int = 5
    trials: int = 1000
    seed: int | None = None
    out: str | None = None
    force_general: bool = False
    renormalize: bool = False
    mode: str = "per_tx"
    monte_carlo: bool = False
    workers: int = 1
    scenario_path: str | None = None
    warm_start: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.var not in SWEEP_VARS:
            raise ValueError(f"unknown sweep variable {self.var!r}; expected one of {SWEEP_VARS}")
        if self.steps < 1:
            raise ValueError("sweep range is empty (steps < 1)")
        if self.steps > 1 and not self.stop > self.start:
            raise ValueError(f"sweep range must be increasing, got {self.start} .. {self.stop}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.seed is None:
            self.seed = self.scenario.rng_seed

    def points(self):
        if self.steps == 1:
            grid = np.array([self.start], dtype=float)
        else:
            grid = np.linspace(self.start, self.stop, self.steps)
        if self.var == "k_users":
            ints = np.unique(np.rint(grid).astype(int))
            if ints.min() < 1:
                raise ValueError("k_users sweep must stay positive")
            return [int(k) for k in ints]
        return [float(x) for x in grid]


def _version():
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def metadata(spec, **more):
    meta = {
        "command": spec.command,
        "scenario": spec.scenario_path or "<in-memory>",
        "scenario_hash": spec.scenario.digest(),
        "seed": spec.seed,
        "version": _version(),
        "trials": spec.trials,
        "force_general_path": spec.force_general,
        "renormalize_per_draw": spec.renormalize,
        "mode": spec.mode,
    }
    if spec.command == "sweep":
        meta.update(
            var=spec.var,
            start=spec.start,
            stop=spec.stop,
            steps=spec.steps,
            monte_carlo=spec.monte_carlo,
            warm_start=spec.warm_start,
        )
    meta.update(spec.extra)
    meta.update(more)
    return meta


def write_csv(path, header, rows, meta):
    """Write ``rows`` under a ``#`` metadata preamble; ``path=None`` returns the text."""
    buf = io.StringIO(newline="")
    for key, value in meta.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    text = buf.getvalue()
    if path is None or path == "-":
        return text
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text


# -- scenario variants -------------------------------------------------------


def with_rho(s, value):
    """Copy of ``s`` with every off-diagonal correlation set to ``value``."""
    rho = np.full((s.n, s.n, s.k_users), float(value))
    rho[np.arange(s.n), np.arange(s.n), :] = 1.0
    return s.replace(rho=rho)


def with_power(s, power_db):
    """Copy of ``s`` at total power ``power_db`` with the same budget shares."""
    p = float(db_to_linear(power_db))
    return s.replace(power_total=p, per_tx_power=s.per_tx_power * (p / s.power_total))


def with_users(s, k_users):
    """Copy of ``s`` with ``k_users`` users at the same ``beta``.

    Per-user CSIT parameters are taken from user 0, so the source scenario
    should be homogeneous across users.
    """
    m_total = s.beta * k_users
    if m_total != round(m_total) or round(m_total) % s.n:
        raise ValueError(f"K={k_users} gives M={m_total}, not divisible among {s.n} TXs")
    if s.theta_kind == "matrix":
        raise ValueError("cannot resize explicit theta matrices")
    theta_r = None if s.theta_r is None else np.full(k_users, s.theta_r[0])
    return s.replace(
        k_users=k_users,
        m_tx=round(m_total) // s.n,
        sigma=np.repeat(s.sigma[:, :1], k_users, axis=1),
        rho=np.repeat(s.rho[:, :, :1], k_users, axis=2),
        theta_r=theta_r,
    )


# -- algorithm comparison ----------------------------------------------------


def evaluate_algorithms(s, *, force_general=False, start=None):
    """Deterministic sum rate of the five compared designs.

    ``start`` is an earlier result of this function whose regularization
    values are offered to the searches as extra candidates.

    Returns
    -------
    dict
        ``name -> (alpha, mu, sum_rate)`` for every name in ``ALGORITHMS``.
    """
    out = {}

    def with_eq(alpha):
        terms = theorem_terms(s, alpha, force_general=force_general)
        mu = mu_from_per_tx_power(s.per_tx_power, s, terms=terms)
        return np.asarray(terms.alpha), mu, terms.sum_rate(mu)

    a_naive, _ = naive_alphas(s, force_general=force_general)
    out["naive_eq"] = with_eq(a_naive)
    prev_same = None if start is None else float(start["same_eq"][0][0])
    a_same, _ = optimize_common_alpha(s, start=prev_same, force_general=force_general)
    out["same_eq"] = with_eq(a_same)
    a_vec, _ = optimize_per_tx_alpha(s, start=a_same, force_general=force_general)
    if start is not None:
        a_prev, _ = optimize_per_tx_alpha(s, start=start["vec_eq"][0], force_general=force_general)
        if with_eq(a_prev)[2] > with_eq(a_vec)[2]:
            a_vec = a_prev
    out["vec_eq"] = with_eq(a_vec)
    for name, mode in (("same_opt", "common_alpha"), ("vec_opt", "per_tx")):
        alpha, mu, _ = joint_optimize(s, mode, force_general=force_general)
        out[name] = (alpha, mu, theorem_terms(s, alpha, force_general=force_general).sum_rate(mu))
    return out


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


_SWEEP_HEADER = ["algorithm", "label", "sumrate_det", "sumrate_mc", "stderr", "alpha", "mu"]


def _algorithm_rows(spec, s, start=None):
    results = evaluate_algorithms(s, force_general=spec.force_general, start=start)
    rows = []
    for name in ALGORITHMS:
        alpha, mu, rate = results[name]
        mc_rate, stderr = "", ""
        if spec.monte_carlo:
            est = monte_carlo(s, PrecoderParams(alpha, mu), spec.trials, spec.seed, renormalize=spec.renormalize)
            mc_rate, stderr = est.sum_rate, est.std_error
        rows.append(
            [
                name,
                ALGORITHM_LABELS[name],
                float(rate),
                mc_rate,
                stderr,
                " ".join(repr(float(a)) for a in alpha),
                " ".join(repr(float(m)) for m in mu),
            ]
        )
    return rows, results


def _sweep(spec, variant):
    if not spec.warm_start:
        blocks = _map(lambda v: _algorithm_rows(spec, variant(spec.scenario, v))[0], spec.points(), spec.workers)
        return [[v, *row] for v, block in zip(spec.points(), blocks) for row in block]
    rows, prev = [], None
    for v in spec.points():
        block, prev = _algorithm_rows(spec, variant(spec.scenario, v), prev)
        rows.extend([v, *row] for row in block)
    return rows


def run_sweep_rho(spec):
    """Five designs at each cross-TX error correlation; returns the CSV text."""
    return write_csv(spec.out, ["rho", *_SWEEP_HEADER], _sweep(spec, with_rho), metadata(spec))


def run_sweep_power(spec):
    """Five designs at each total power in dB; returns the CSV text."""
    return write_csv(spec.out, ["P_dB", *_SWEEP_HEADER], _sweep(spec, with_power), metadata(spec))


def convergence_rows(s, k_values, trials, seed, *, renormalize=False, force_general=False, rho_values=None, workers=1):
    """Deterministic vs simulated sum rate at ``alpha = 1/(beta P)`` and equal power.

    One row per ``(K, rho)``: ``K, rho_label, rho, sumrate_det, sumrate_mc,
    stderr, abs_deviation, rel_deviation`` with the relative deviation taken
    with respect to the simulated rate.
    """
    rho_values = rho_values or TABLE_ONE_RHO

    def point(args):
        k_users, (label, rho) = args
        sk = with_rho(with_users(s, k_users), rho)
        alpha = np.full(sk.n, 1.0 / (sk.beta * sk.power_total))
        terms = theorem_terms(sk, alpha, force_general=force_general)
        mu = mu_from_per_tx_power(sk.per_tx_power, sk, terms=terms)
        det = terms.sum_rate(mu)
        est = monte_carlo(sk, PrecoderParams(alpha, mu), trials, seed, renormalize=renormalize)
        dev = abs(det - est.sum_rate)
        return [k_users, label, float(rho), det, est.sum_rate, est.std_error, dev, dev / abs(est.sum_rate)]

    items = [(k, lr) for k in k_values for lr in rho_values.items()]
    return _map(point, items, workers)


CONVERGENCE_HEADER = ["K", "rho_label", "rho", "sumrate_det", "sumrate_mc", "stderr", "abs_deviation", "rel_deviation"]


def run_convergence_study(spec):
    """Deviation between deterministic and simulated sum rate along ``K``."""
    rows = convergence_rows(
        spec.scenario,
        spec.points(),
        spec.trials,
        spec.seed,
        renormalize=spec.renormalize,
        force_general=spec.force_general,
        workers=spec.workers,
    )
    return write_csv(spec.out, CONVERGENCE_HEADER, rows, metadata(spec))


RUNNERS = {"rho": run_sweep_rho, "power_db": run_sweep_power, "k_users": run_convergence_study}

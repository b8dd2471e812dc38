"""Robust regularization and power design on the deterministic sum rate.

All objectives here are deterministic equivalents, so every search is
reproducible and cheap compared with simulation. Power scalings ``mu`` are
always parameterized through per-TX power budgets ``p`` (``sum(p) == P``)
when the regularization changes, because the map from budgets to ``mu``
depends on ``alpha``.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .detequiv import mu_from_per_tx_power, theorem_terms
from .exceptions import OptimizationError

__all__ = [
    "PowerProblem",
    "OptimizerTrace",
    "line_search",
    "naive_alpha",
    "naive_alphas",
    "optimize_common_alpha",
    "optimize_per_tx_alpha",
    "build_power_problem",
    "lambda_update",
    "inner_minimize",
    "optimize_power",
    "joint_optimize",
    "det_sum_rate",
    "budgets_from_mu",
]

log = logging.getLogger(__name__)

ALPHA_BRACKET = (1e-6, 1e3)
GRID_POINTS = 61
LOG_XATOL = 1e-6
RESTARTS = 8
_EPS_POS = 1e-12


@dataclass
class OptimizerTrace:
    """Iterate history of one optimizer run.

    Each record is ``(iteration, objective, variables)``; ``objective`` is a
    sum rate for the ``alpha`` searches and ``prod_k u_k`` for the power
    iteration.
    """

    kind: str
    records: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    notes: dict = field(default_factory=dict)

    def add(self, objective, **variables):
        self.records.append((len(self.records), float(objective), {k: np.array(v, dtype=float) for k, v in variables.items()}))

    @property
    def objectives(self):
        return np.array([r[1] for r in self.records])

    def to_csv(self, path):
        names = sorted({k for r in self.records for k in r[2]})
        with open(path, "w", newline="") as fh:
            fh.write(f"# kind: {self.kind}\n# converged: {self.converged}\n")
            for key, value in self.notes.items():
                fh.write(f"# {key}: {value}\n")
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["iteration", "objective", *names])
            for it, obj, var in self.records:
                cells = [" ".join(repr(float(x)) for x in np.atleast_1d(var[n])) if n in var else "" for n in names]
                writer.writerow([it, repr(obj), *cells])


def budgets_from_mu(terms, mu):
    """Per-TX power budgets ``P w_j mu_j^2`` implied by ``mu`` under ``terms``."""
    p = terms.power_total * terms.power_weights * np.asarray(mu, dtype=float) ** 2
    return p * (terms.power_total / math.fsum(p))


def det_sum_rate(s, alpha, *, mu=None, p=None, force_general=False):
    """Deterministic sum rate; ``mu`` wins over per-TX budgets ``p``.

    With neither given the scenario's own budgets are used.
    """
    terms = theorem_terms(s, alpha, force_general=force_general)
    if mu is None:
        p = s.per_tx_power if p is None else p
        mu = mu_from_per_tx_power(p, s, terms=terms)
    return terms.sum_rate(mu)


def line_search(objective, lo=ALPHA_BRACKET[0], hi=ALPHA_BRACKET[1], *, points=GRID_POINTS, xatol=LOG_XATOL, extra=()):
    """Maximize a scalar function of ``alpha`` over ``[lo, hi]``.

    A log-spaced grid locates the best cell, then a bounded Brent search
    refines it in ``log(alpha)``. Points in ``extra`` are also considered.
    Among equal maxima the smallest ``alpha`` wins.

    Returns
    -------
    alpha, value : float
    """
    grid = np.logspace(math.log10(lo), math.log10(hi), points)
    values = np.empty(points)
    for i, a in enumerate(grid):
        values[i] = objective(a)
        if not math.isfinite(values[i]):
            raise OptimizationError(f"non-finite objective {values[i]} at alpha={a:.6g}")
    best = int(np.argmax(values))
    left, right = grid[max(best - 1, 0)], grid[min(best + 1, points - 1)]
    candidates = [(values[best], grid[best])]
    if right > left:
        res = scipy.optimize.minimize_scalar(
            lambda t: -objective(math.exp(t)),
            bounds=(math.log(left), math.log(right)),
            method="bounded",
            options={"xatol": xatol},
        )
        a_ref = math.exp(res.x)
        candidates.append((-res.fun, a_ref))
    for a in extra:
        if lo <= a <= hi:
            candidates.append((objective(a), float(a)))
    top = max(v for v, _ in candidates)
    return min(a for v, a in candidates if v == top), top


def _alpha_search(s, p, force_general, extra=()):
    def objective(a):
        terms = theorem_terms(s, a, force_general=force_general)
        return terms.sum_rate(mu_from_per_tx_power(p, s, terms=terms))

    return line_search(objective, extra=extra)


def naive_alphas(s, *, force_general=False):
    """Naive regularization of every TX and how each was obtained.

    Returns
    -------
    alpha : ndarray, shape ``(n,)``
    methods : list of {"closed_form", "line_search"}
    """
    out, methods = [], []
    for j in range(s.n):
        a, how = _naive_alpha(s, j, force_general)
        out.append(a)
        methods.append(how)
    return np.array(out), methods


def naive_alpha(s, j, *, force_general=False):
    """Regularization TX ``j`` would choose if its estimate were shared by all TXs.

    Homogeneous isotropic CSIT has the closed form
    ``(1 + sigma^2 P) / ((1 - sigma^2) beta P)``; otherwise the centralized
    deterministic sum rate built from TX ``j``'s error levels is maximized by
    line search.

    Raises
    ------
    OptimizationError
        If TX ``j`` has ``sigma = 1`` for some user.
    """
    return _naive_alpha(s, j, force_general)[0]


def _naive_alpha(s, j, force_general):
    sigma = s.sigma[j]
    if np.any(sigma >= 1.0):
        raise OptimizationError(f"uninformative CSIT at TX {j}")
    if s.isotropic and np.all(sigma == sigma[0]):
        s2 = sigma[0] ** 2
        p = s.power_total
        return (1.0 + s2 * p) / ((1.0 - s2) * s.beta * p), "closed_form"
    central = s.replace(sigma=np.tile(sigma, (s.n, 1)), rho=np.ones_like(s.rho))
    alpha, _ = _alpha_search(central, central.per_tx_power, force_general)
    return alpha, "line_search"


def optimize_common_alpha(s, p=None, *, start=None, force_general=False):
    """Best regularization shared by all TXs, with per-TX budgets ``p`` held fixed.

    ``start`` (if given) is kept when nothing on the search beats it.
    """
    t0 = time.perf_counter()
    p = s.per_tx_power if p is None else np.asarray(p, dtype=float)
    extra = () if start is None else (float(start),)
    alpha, value = _alpha_search(s, p, force_general, extra)
    trace = OptimizerTrace("common_alpha")
    trace.add(value, alpha=[alpha])
    trace.converged = True
    trace.wall_time = time.perf_counter() - t0
    return alpha, trace


def optimize_per_tx_alpha(s, p=None, *, start=None, force_general=False, tol=1e-8, max_sweeps=50):
    """Per-TX regularization by cyclic coordinate ascent.

    Starts from ``start`` or from the best common value, and sweeps the TXs
    in order with the bracketed line search until a sweep gains less than
    ``tol`` or ``max_sweeps`` is reached.
    """
    t0 = time.perf_counter()
    p = s.per_tx_power if p is None else np.asarray(p, dtype=float)
    if start is None:
        start, _ = optimize_common_alpha(s, p, force_general=force_general)
    alpha = np.broadcast_to(np.asarray(start, dtype=float), (s.n,)).copy()

    def objective(vec):
        terms = theorem_terms(s, vec, force_general=force_general)
        return terms.sum_rate(mu_from_per_tx_power(p, s, terms=terms))

    trace = OptimizerTrace("per_tx_alpha")
    best = objective(alpha)
    trace.add(best, alpha=alpha)
    for _ in range(max_sweeps):
        before = best
        for j in range(s.n):

            def coord(a, j=j):
                trial = alpha.copy()
                trial[j] = a
                return objective(trial)

            a_j, val = line_search(coord, extra=(alpha[j],))
            if val > best:
                alpha[j], best = a_j, val
        trace.add(best, alpha=alpha)
        if best - before < tol:
            trace.converged = True
            break
    trace.wall_time = time.perf_counter() - t0
    return alpha, trace


@dataclass(frozen=True, eq=False)
class PowerProblem:
    """Sum-of-ratios form of the power allocation at fixed regularization.

    ``u_k(x) = (1/P + x^T B_k x) / (1/P + x^T (A_k + B_k) x)`` with
    ``A_k = s_k s_k^T`` and feasibility ``||C x|| <= 1``, ``C = diag(c_diag)``.
    """

    a_k: np.ndarray
    b_k: np.ndarray
    c_diag: np.ndarray
    p: float
    signal: np.ndarray

    @property
    def n(self):
        return self.c_diag.shape[0]

    def _parts(self, x):
        bx = np.einsum("kjl,l->kj", self.b_k, x)
        num = 1.0 / self.p + bx @ x
        sx = self.signal @ x
        return bx, num, sx, num + sx**2

    def u(self, x):
        _, num, _, den = self._parts(np.asarray(x, dtype=float))
        return num / den

    def objective(self, lam, x):
        return float(np.dot(lam, self.u(x)))

    def gradient(self, lam, x):
        bx, num, sx, den = self._parts(np.asarray(x, dtype=float))
        grad_u = 2.0 * (bx * (den - num)[:, None] - (num * sx)[:, None] * self.signal) / (den**2)[:, None]
        return lam @ grad_u

    def feasible_norm(self, x):
        return float(np.linalg.norm(self.c_diag * x))


def build_power_problem(s, alpha, *, terms=None, force_general=False):
    if terms is None:
        terms = theorem_terms(s, alpha, force_general=force_general)
    signal = terms.signal
    return PowerProblem(
        a_k=np.einsum("kj,kl->kjl", signal, signal),
        b_k=terms.interference,
        c_diag=np.sqrt(terms.power_weights),
        p=terms.power_total,
        signal=signal,
    )


def lambda_update(u):
    """``lambda_i = (prod u)^(1/K) / u_i``, computed in log space.

    >>> lambda_update([1.0, 4.0])
    array([2. , 0.5])
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(~np.isfinite(u)):
        raise ValueError("u must be positive and finite")
    logs = np.log(u)
    return np.exp(logs.mean() - logs)


def _project(y):
    y = np.maximum(y, _EPS_POS)
    norm = np.linalg.norm(y)
    return y / norm if norm > 1.0 else y


def _projected_gradient(problem, lam, y0, max_iter=500, tol=1e-14):
    c = problem.c_diag

    def f(y):
        return problem.objective(lam, y / c)

    y, fy, step = y0, f(y0), 1.0
    for _ in range(max_iter):
        g = problem.gradient(lam, y / c) / c
        while True:
            y_new = _project(y - step * g)
            d = y_new - y
            f_new = f(y_new)
            if f_new <= fy + g @ d + (d @ d) / (2.0 * step) or step < 1e-16:
                break
            step *= 0.5
        if f_new > fy:
            break
        done = fy - f_new <= tol * max(1.0, abs(fy))
        y, fy = y_new, f_new
        step *= 2.0
        if done:
            break
    return y, fy


def inner_minimize(problem, lam, start, *, restarts=RESTARTS, seed=0):
    """Locally minimize ``sum_k lam_k u_k(x)`` over ``||C x|| <= 1``, ``x > 0``.

    Projected gradient with Armijo backtracking in ``y = C x``, run from
    ``start`` and from ``restarts`` seeded random points; the best result is
    returned, so the objective never exceeds its value at ``start``.
    """
    lam = np.asarray(lam, dtype=float)
    c = problem.c_diag
    start = np.asarray(start, dtype=float)
    y_start = c * start
    if np.linalg.norm(y_start) > 1.0 + 1e-10:
        raise ValueError("start point is infeasible")
    f_start = problem.objective(lam, start)
    best_y, best_f = y_start, f_start
    rng = np.random.default_rng(seed)
    inits = [_project(y_start)] + [_project(np.abs(rng.standard_normal(problem.n)) + 1e-3) for _ in range(restarts)]
    inits = [y / np.linalg.norm(y) for y in inits]
    for y0 in inits:
        y, fy = _projected_gradient(problem, lam, y0)
        if fy < best_f:
            best_y, best_f = y, fy
    return best_y / c


def optimize_power(s, alpha, *, tol=1e-10, max_outer=200, mu0=None, terms=None, force_general=False):
    """Power scalings maximizing the deterministic sum rate at fixed ``alpha``.

    Alternates the closed-form ``lambda`` update with :func:`inner_minimize`.
    Each iterate is pushed radially onto ``||C mu|| = 1``, which cannot
    increase any ``u_k``. Stops when ``log prod u`` changes by less than
    ``tol``.

    Returns
    -------
    mu : ndarray
    trace : OptimizerTrace
        Objective column is ``prod_k u_k``; ``trace.converged`` is False if
        ``max_outer`` was hit.
    """
    t0 = time.perf_counter()
    if terms is None:
        terms = theorem_terms(s, alpha, force_general=force_general)
    problem = build_power_problem(s, alpha, terms=terms)
    if mu0 is None:
        mu0 = mu_from_per_tx_power(s.per_tx_power, s, terms=terms)
    mu = np.asarray(mu0, dtype=float)
    mu = mu / problem.feasible_norm(mu)
    trace = OptimizerTrace("power")
    log_prod = float(np.log(problem.u(mu)).sum())
    trace.add(math.exp(log_prod), mu=mu)
    for _ in range(max_outer):
        lam = lambda_update(problem.u(mu))
        x = inner_minimize(problem, lam, mu)
        x = x / problem.feasible_norm(x)
        new_log = float(np.log(problem.u(x)).sum())
        if new_log > log_prod:
            # numerical noise only; keep the previous iterate
            x, new_log = mu, log_prod
        trace.add(math.exp(new_log), mu=x, lam=lam)
        change = log_prod - new_log
        mu, log_prod = x, new_log
        if change < tol:
            trace.converged = True
            break
    if not trace.converged:
        log.warning("power optimization stopped after %d outer iterations", max_outer)
    trace.wall_time = time.perf_counter() - t0
    return mu, trace


_MODES = {"per_tx": "per_tx", "per-tx": "per_tx", "common": "common_alpha", "common_alpha": "common_alpha"}


def joint_optimize(s, mode="per_tx", *, tol=1e-6, max_rounds=20, force_general=False):
    """Alternate regularization and power optimization.

    The regularization step keeps the per-TX power budgets implied by the
    current ``mu``; the power step starts from the current ``mu``. With
    ``mode="per_tx"`` the common-regularization solution is computed first
    and then refined, so the result is never worse than it.

    Returns
    -------
    alpha : ndarray, shape ``(n,)``
    mu : ndarray, shape ``(n,)``
    trace : OptimizerTrace
        Objective column is the deterministic sum rate after each step.
    """
    try:
        mode = _MODES[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}") from None
    t0 = time.perf_counter()
    if mode == "per_tx":
        alpha, mu, inner = joint_optimize(s, "common_alpha", tol=tol, max_rounds=max_rounds, force_general=force_general)
        trace = OptimizerTrace("joint_per_tx", records=list(inner.records))
    else:
        alpha = np.full(s.n, optimize_common_alpha(s, force_general=force_general)[0])
        terms = theorem_terms(s, alpha, force_general=force_general)
        mu = mu_from_per_tx_power(s.per_tx_power, s, terms=terms)
        trace = OptimizerTrace("joint_common_alpha")
        trace.add(terms.sum_rate(mu), alpha=alpha, mu=mu)

    terms = theorem_terms(s, alpha, force_general=force_general)
    rate = terms.sum_rate(mu)
    for _ in range(max_rounds):
        before = rate
        p = budgets_from_mu(terms, mu)
        if mode == "per_tx":
            new_alpha, _ = optimize_per_tx_alpha(s, p, start=alpha, force_general=force_general)
        else:
            a, _ = optimize_common_alpha(s, p, start=alpha[0], force_general=force_general)
            new_alpha = np.full(s.n, a)
        new_terms = theorem_terms(s, new_alpha, force_general=force_general)
        new_mu = mu_from_per_tx_power(p, s, terms=new_terms)
        new_rate = new_terms.sum_rate(new_mu)
        if new_rate >= rate:
            alpha, terms, mu, rate = new_alpha, new_terms, new_mu, new_rate
        trace.add(rate, alpha=alpha, mu=mu)

        new_mu, _ = optimize_power(s, alpha, mu0=mu, terms=terms)
        new_rate = terms.sum_rate(new_mu)
        if new_rate >= rate:
            mu, rate = new_mu, new_rate
        trace.add(rate, alpha=alpha, mu=mu)
        if rate - before < tol:
            trace.converged = True
            break
    trace.wall_time = time.perf_counter() - t0
    return alpha, mu, trace

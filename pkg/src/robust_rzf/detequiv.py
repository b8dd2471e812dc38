"""Large-system deterministic equivalents of the per-user SINR.

The chain is: per-TX Stieltjes fixed points ``m_k^(j)`` and deterministic
resolvents ``Q_o^(j)``; the cross-TX trace functionals
``Gamma_{j,j'}(X)``, which need one ``K x K`` linear solve per TX pair; and
finally the SINR and interference equivalents assembled from those pieces.

Every ``Gamma_{j,j'}`` is linear in ``X``, so after the linear solve it is
stored as a single kernel matrix ``W`` with ``Gamma(X) = tr(W X) / M``.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .exceptions import FixedPointError, PowerConstraintError, SingularSystemError, SpecializationError
from .scenario import csit_coefficients

__all__ = [
    "FixedPointSolution",
    "GammaPair",
    "GammaCache",
    "TheoremTerms",
    "DetEquivReport",
    "fixed_point_map",
    "solve_fixed_point",
    "closed_form_m_iso",
    "gamma_functional",
    "theorem_terms",
    "sinr_det_equiv",
    "power_weights",
    "mu_from_per_tx_power",
    "iso_specializations",
    "write_report_csv",
]

log = logging.getLogger(__name__)

FP_TOL = 1e-12
FP_MAX_ITER = 10_000
MU_CONSTRAINT_TOL = 1e-8
MAX_CONDITION = 1e12
_INTERFERENCE_WARN = -1e-8


@dataclass(frozen=True, eq=False)
class FixedPointSolution:
    """Fixed point of one TX: ``m`` (length K) and ``q_o`` (M x M)."""

    m: np.ndarray
    q_o: np.ndarray
    alpha: float
    iterations: int
    residual: float


def fixed_point_map(theta, alpha, m):
    """One application of the fixed-point map.

    Returns the updated ``m`` and the resolvent ``Q_o`` built from the
    *input* ``m``.
    """
    m_total = theta.shape[1]
    weights = 1.0 / (m_total * (1.0 + m))
    inner = np.einsum("k,kab->ab", weights, theta)
    inner[np.diag_indices(m_total)] += alpha
    q_o = np.linalg.inv(inner)
    q_o = 0.5 * (q_o + q_o.conj().T)
    m_new = np.einsum("kab,ba->k", theta, q_o).real / m_total
    return m_new, q_o


def solve_fixed_point(theta, alpha, tol=FP_TOL, max_iter=FP_MAX_ITER, accelerate=True):
    """Solve ``m_k = tr(theta_k Q_o) / M`` for one TX.

    The iteration starts from ``m = 1/alpha``. With ``accelerate`` an
    Aitken-accelerated run supplies a warm start that the plain iteration
    then finishes. Stops once the sup-norm residual is at most
    ``tol * max(1, max(m))``.

    Parameters
    ----------
    theta : ndarray, shape ``(K, M, M)``
    alpha : float
    tol : float
    max_iter : int

    Raises
    ------
    FixedPointError
        If ``max_iter`` plain iterations do not reach the tolerance.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    theta = np.asarray(theta)
    k_users = theta.shape[0]
    m = np.full(k_users, 1.0 / alpha)
    if accelerate:
        try:
            m = np.asarray(
                scipy.optimize.fixed_point(
                    lambda v: fixed_point_map(theta, alpha, v)[0], m, xtol=tol, maxiter=500
                ),
                dtype=float,
            )
        except RuntimeError:
            m = np.full(k_users, 1.0 / alpha)
        if np.any(~np.isfinite(m)) or np.any(m <= 0):
            m = np.full(k_users, 1.0 / alpha)
    residual = math.inf
    for it in range(1, max_iter + 1):
        m_new, q_o = fixed_point_map(theta, alpha, m)
        residual = float(np.abs(m_new - m).max())
        if residual <= tol * max(1.0, float(m.max())):
            log.debug("fixed point alpha=%g converged in %d iterations", alpha, it)
            return FixedPointSolution(m=m, q_o=q_o, alpha=float(alpha), iterations=it, residual=residual)
        m = m_new
    raise FixedPointError(
        f"fixed point for alpha={alpha} did not converge in {max_iter} iterations "
        f"(last residual {residual:.3e})",
        residual=residual,
        iterations=max_iter,
    )


def closed_form_m_iso(alpha, beta):
    """Isotropic fixed point, identical for every user.

    >>> round(float(closed_form_m_iso(1.0, 1.0)), 10)
    0.6180339887
    """
    alpha = np.asarray(alpha, dtype=float)
    ab = alpha * beta
    return (beta - 1.0 - ab + np.sqrt((ab - beta + 1.0) ** 2 + 4.0 * ab * beta)) / (2.0 * ab)


def _pair_weights(coeffs, rho, j, jp):
    """``sqrt(c0 c0') + sqrt(c1 c1') rho`` for every user."""
    return np.sqrt(coeffs.c0[j] * coeffs.c0[jp]) + np.sqrt(coeffs.c1[j] * coeffs.c1[jp]) * rho[j, jp]


@dataclass(frozen=True, eq=False)
class GammaPair:
    """Solved trace functional of one ordered TX pair.

    ``gamma_theta[k]`` is ``Gamma(theta_k)``, the solution of
    ``a_matrix @ gamma_theta = b_vector``; ``kernel`` is ``W`` with
    ``Gamma(X) = tr(W X) / M``.
    """

    gamma_theta: np.ndarray
    a_matrix: np.ndarray
    b_vector: np.ndarray
    kernel: np.ndarray
    condition: float

    def __call__(self, x):
        m_total = self.kernel.shape[0]
        return np.einsum("ab,ba->", self.kernel, x) / m_total


class GammaCache:
    """Lazily solved ``Gamma_{j,j'}`` functionals of one scenario.

    Parameters
    ----------
    theta : ndarray, shape ``(K, M, M)``
    fixed_points : sequence of FixedPointSolution
        One per TX.
    coeffs : CsitCoefficients
    rho : ndarray, shape ``(n, n, K)``

    Notes
    -----
    Entries are written once and then only read; share an instance across
    threads only after :meth:`prime` has filled it.
    """

    def __init__(self, theta, fixed_points, coeffs, rho):
        self.theta = np.asarray(theta)
        self.fixed_points = list(fixed_points)
        self.coeffs = coeffs
        self.rho = np.asarray(rho)
        self._pairs = {}
        self._theta_q = {}

    @property
    def n(self):
        return len(self.fixed_points)

    def _theta_times_q(self, j):
        if j not in self._theta_q:
            self._theta_q[j] = self.theta @ self.fixed_points[j].q_o
        return self._theta_q[j]

    def pair(self, j, jp):
        key = (j, jp)
        if key not in self._pairs:
            self._pairs[key] = self._solve(j, jp)
        return self._pairs[key]

    def prime(self):
        for j in range(self.n):
            for jp in range(self.n):
                self.pair(j, jp)
        return self

    def gamma(self, j, jp, x):
        return self.pair(j, jp)(x)

    def _solve(self, j, jp):
        theta = self.theta
        k_users, m_total = theta.shape[:2]
        fp, fpp = self.fixed_points[j], self.fixed_points[jp]
        # traces[t, l] = tr(theta_t Q_o^(j') theta_l Q_o^(j)) / M
        traces = np.einsum("tab,lba->tl", self._theta_times_q(jp), self._theta_times_q(j)) / m_total
        w = _pair_weights(self.coeffs, self.rho, j, jp)
        denom = (1.0 + fp.m) * (1.0 + fpp.m)
        a_matrix = np.eye(k_users) - (w**2 / (m_total * denom))[None, :] * traces.T
        b_vector = traces.T @ (w / denom) / m_total
        condition = float(np.linalg.cond(a_matrix))
        if not condition < MAX_CONDITION:
            raise SingularSystemError(
                f"Gamma system for TX pair ({j}, {jp}) is singular (condition {condition:.3e})",
                condition=condition,
            )
        gamma_theta = np.linalg.solve(a_matrix, b_vector)
        resid = float(np.abs(a_matrix @ gamma_theta - b_vector).max())
        if resid > 1e-10 * max(float(np.abs(b_vector).max()), 1e-300):
            raise SingularSystemError(
                f"Gamma system for TX pair ({j}, {jp}) solved with residual {resid:.3e}", condition=condition
            )
        coef = (w + w**2 * gamma_theta) / (m_total * denom)
        kernel = fp.q_o @ np.einsum("k,kab->ab", coef, theta) @ fpp.q_o
        return GammaPair(gamma_theta, a_matrix, b_vector, kernel, condition)


def gamma_functional(pair, x, cache):
    """``Gamma_{j,j'}(X)`` for ``pair = (j, j')`` using (and filling) ``cache``."""
    j, jp = pair
    return cache.gamma(j, jp, x)


@dataclass(frozen=True, eq=False)
class TheoremTerms:
    """Everything in the SINR equivalent that does not depend on ``mu``.

    With ``s_k = signal[k]`` and ``B_k = interference[k]``::

        SINR_k = P (s_k . mu)^2 / (1 + P mu^T B_k mu)

    ``power_weights[j] = Gamma_jj(E_j E_j^H) / Gamma_jj(I)`` gives the
    constraint ``sum_j power_weights[j] mu_j^2 = 1``.
    """

    power_total: float
    alpha: np.ndarray
    m: np.ndarray
    phi: np.ndarray
    gamma_identity: np.ndarray
    gamma_block: np.ndarray
    signal: np.ndarray
    interference: np.ndarray
    method: str
    cache: GammaCache | None = field(default=None, repr=False)

    @property
    def power_weights(self):
        return self.gamma_block / self.gamma_identity

    def evaluate(self, mu):
        """``(sinr, interference)`` vectors for power scalings ``mu``."""
        mu = np.asarray(mu, dtype=float)
        p = self.power_total
        interference = p * np.einsum("j,kjl,l->k", mu, self.interference, mu)
        sig = p * (self.signal @ mu) ** 2
        low = interference.min()
        if low < 0:
            if low < _INTERFERENCE_WARN:
                log.warning("negative interference equivalent %.3e clamped to 0", low)
            interference = np.maximum(interference, 0.0)
        return sig / (1.0 + interference), interference

    def sum_rate(self, mu):
        sinr, _ = self.evaluate(mu)
        return float(np.log2(1.0 + sinr).sum())


def _as_alpha(alpha, n):
    alpha = np.asarray(alpha, dtype=float)
    alpha = np.full(n, float(alpha)) if alpha.ndim == 0 else alpha
    if alpha.shape != (n,):
        raise ValueError(f"alpha has shape {alpha.shape}, expected {(n,)}")
    if np.any(alpha <= 0) or np.any(~np.isfinite(alpha)):
        raise ValueError("regularization coefficients must be positive")
    return alpha


def _isotropic_terms(s, alpha):
    n, k_users, m_total = s.n, s.k_users, s.m_total
    coeffs = csit_coefficients(s)
    m_iso = closed_form_m_iso(alpha, s.beta)
    gamma = np.empty((n, n))
    for j in range(n):
        for jp in range(n):
            w = _pair_weights(coeffs, s.rho, j, jp)
            ratio = (1.0 + m_iso[j]) * (1.0 + m_iso[jp]) / (m_iso[j] * m_iso[jp])
            gamma[j, jp] = (w.sum() / m_total) / (ratio - (w**2).sum() / m_total)
    g_id = np.diag(gamma).copy()
    m = np.repeat(m_iso[:, None], k_users, axis=1)
    phi = m / n
    one_m = 1.0 + m
    signal = (np.sqrt(coeffs.c0 / g_id[:, None]) * phi / one_m).T
    # Gamma(X) = Gamma(I) tr(X) / M for every X when all theta are identity
    cross = coeffs.c0[None, :, :] * coeffs.c0[:, None, :] + s.rho * coeffs.c2[:, None, :] * coeffs.c2[None, :, :]
    third = phi[None, :, :] * phi[:, None, :] * gamma[:, :, None] * cross / (one_m[:, None, :] * one_m[None, :, :])
    second = 2.0 * (gamma[:, :, None] / n) * (coeffs.c0 * phi / one_m)[None, :, :]
    first = np.zeros((n, n, k_users))
    first[np.arange(n), np.arange(n), :] = (g_id / n)[:, None]
    b = (first - second + third) / np.sqrt(np.outer(g_id, g_id))[:, :, None]
    b = b.transpose(2, 0, 1)
    b = 0.5 * (b + b.transpose(0, 2, 1))
    return TheoremTerms(
        power_total=s.power_total,
        alpha=alpha,
        m=m,
        phi=phi,
        gamma_identity=g_id,
        gamma_block=g_id / n,
        signal=signal,
        interference=b,
        method="isotropic",
    )


def _general_terms(s, alpha, tol, max_iter):
    n, k_users, m_total = s.n, s.k_users, s.m_total
    theta = s.theta
    coeffs = csit_coefficients(s)
    fps = [solve_fixed_point(theta, a, tol=tol, max_iter=max_iter) for a in alpha]
    cache = GammaCache(theta, fps, coeffs, s.rho).prime()
    m = np.stack([fp.m for fp in fps])
    one_m = 1.0 + m
    blocks = [s.block(j) for j in range(n)]

    phi = np.empty((n, k_users))
    for j, blk in enumerate(blocks):
        phi[j] = np.einsum("ab,kba->k", fps[j].q_o[blk, :], theta[:, :, blk]).real / m_total
    g_id = np.array([np.trace(cache.pair(j, j).kernel).real / m_total for j in range(n)])
    g_blk = np.array([np.trace(cache.pair(j, j).kernel[blk, blk]).real / m_total for j, blk in enumerate(blocks)])

    b = np.empty((k_users, n, n), dtype=complex)
    for j, blk in enumerate(blocks):
        for jp, blkp in enumerate(blocks):
            pair = cache.pair(j, jp)
            w_kernel = pair.kernel
            g_cross_block = np.einsum("ab,kba->k", w_kernel[blk, blkp], theta[:, blkp, blk]) / m_total
            g_theta_block = np.einsum("ab,kba->k", w_kernel[blk, :], theta[:, :, blk]) / m_total
            cross = coeffs.c0[j] * coeffs.c0[jp] + s.rho[j, jp] * coeffs.c2[j] * coeffs.c2[jp]
            val = (
                g_cross_block
                - 2.0 * g_theta_block * coeffs.c0[jp] * phi[jp] / one_m[jp]
                + phi[jp] * phi[j] * pair.gamma_theta * cross / (one_m[j] * one_m[jp])
            )
            b[:, j, jp] = val / math.sqrt(g_id[j] * g_id[jp])
    b = (0.5 * (b + b.transpose(0, 2, 1))).real
    signal = (np.sqrt(coeffs.c0 / g_id[:, None]) * phi / one_m).T
    return TheoremTerms(
        power_total=s.power_total,
        alpha=alpha,
        m=m,
        phi=phi,
        gamma_identity=g_id,
        gamma_block=g_blk,
        signal=signal,
        interference=b,
        method="general",
        cache=cache,
    )


def theorem_terms(s, alpha, *, force_general=False, tol=FP_TOL, max_iter=FP_MAX_ITER):
    """Compute the ``mu``-independent pieces of the SINR equivalent.

    Isotropic scenarios take a closed-form fast path unless
    ``force_general`` is set.
    """
    alpha = _as_alpha(alpha, s.n)
    if s.isotropic and not force_general:
        return _isotropic_terms(s, alpha)
    return _general_terms(s, alpha, tol, max_iter)


@dataclass(frozen=True, eq=False)
class DetEquivReport:
    """Deterministic equivalents for one ``(alpha, mu)`` choice.

    ``psi_o[j]`` is ``Gamma_jj(I)``, the equivalent of the power
    normalization of TX ``j``.
    """

    sinr_o: np.ndarray
    i_o: np.ndarray
    phi: np.ndarray
    psi_o: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    sum_rate_o: float
    m: np.ndarray
    gamma_block: np.ndarray
    method: str

    @classmethod
    def from_terms(cls, terms, mu):
        sinr, interference = terms.evaluate(mu)
        return cls(
            sinr_o=sinr,
            i_o=interference,
            phi=terms.phi,
            psi_o=terms.gamma_identity,
            mu=np.asarray(mu, dtype=float),
            alpha=terms.alpha,
            sum_rate_o=float(np.log2(1.0 + sinr).sum()),
            m=terms.m,
            gamma_block=terms.gamma_block,
            method=terms.method,
        )


def _check_constraint(terms, mu):
    total = float(np.dot(terms.power_weights, np.asarray(mu) ** 2))
    if abs(total - 1.0) > MU_CONSTRAINT_TOL:
        raise PowerConstraintError(f"sum_j mu_j^2 Gamma_jj(E_j E_j^H)/Gamma_jj(I) = {total!r}, expected 1")


def sinr_det_equiv(s, params, *, force_general=False, terms=None):
    """Deterministic SINR, interference and sum rate for ``params``.

    Parameters
    ----------
    s : Scenario
    params : PrecoderParams
        ``params.mu`` must satisfy the asymptotic sum power constraint.
    force_general : bool
        Use the matrix path even for isotropic scenarios.
    terms : TheoremTerms, optional
        Precomputed terms for ``params.alpha``.

    Raises
    ------
    PowerConstraintError
    FixedPointError, SingularSystemError
        Propagated from the fixed-point and linear solves.
    """
    if terms is None:
        terms = theorem_terms(s, params.alpha, force_general=force_general)
    _check_constraint(terms, params.mu)
    return DetEquivReport.from_terms(terms, params.mu)


def power_weights(s, alpha, *, force_general=False):
    return theorem_terms(s, alpha, force_general=force_general).power_weights


def mu_from_per_tx_power(p, s, alphas=None, *, terms=None, force_general=False):
    """Power scalings that give TX ``j`` the asymptotic transmit power ``p[j]``."""
    p = np.asarray(p, dtype=float)
    if p.shape != (s.n,):
        raise ValueError(f"per-TX powers have shape {p.shape}, expected {(s.n,)}")
    if np.any(p <= 0):
        raise ValueError("per-TX powers must be positive")
    if not math.isclose(math.fsum(p), s.power_total, rel_tol=1e-9):
        raise ValueError(f"per-TX powers sum to {math.fsum(p)}, expected {s.power_total}")
    if terms is None:
        terms = theorem_terms(s, alphas, force_general=force_general)
    return np.sqrt(p / (s.power_total * terms.power_weights))


# -- closed-form isotropic cases ---------------------------------------------

_SPECIALIZATIONS = ("centralized", "fully_distributed", "dcsi")


def _require(cond, message):
    if not cond:
        raise SpecializationError(message)


def iso_specializations(kind, s, params):
    """Closed-form SINR equivalents for isotropic channels with ``mu = 1``.

    ``kind`` is ``"centralized"`` (``rho = 1``, equal ``sigma`` and
    ``alpha`` across TXs), ``"fully_distributed"`` (``rho = 0`` off the
    diagonal, equal ``alpha``) or ``"dcsi"`` (any ``rho``, per-TX
    ``alpha``). No linear system is solved.
    """
    _require(kind in _SPECIALIZATIONS, f"unknown specialization {kind!r}")
    _require(s.isotropic, "closed forms need theta_k = I for every user")
    mu = np.asarray(params.mu, dtype=float)
    _require(np.all(mu == 1.0), "closed forms assume mu_j = 1 for every TX")
    alpha = np.asarray(params.alpha, dtype=float)
    n, beta, p, m_total = s.n, s.beta, s.power_total, s.m_total
    c0 = 1.0 - s.sigma**2
    c1 = s.sigma**2
    c2 = s.sigma * np.sqrt(c0)
    off = ~np.eye(n, dtype=bool)

    if kind == "centralized":
        _require(np.all(s.rho == 1.0), "centralized case needs rho = 1")
        _require(np.all(s.sigma == s.sigma[:1]), "centralized case needs identical sigma at every TX")
        _require(np.all(alpha == alpha[0]), "centralized case needs a common alpha")
        m = float(closed_form_m_iso(alpha[0], beta))
        sig2 = c1[0]
        grow = (1.0 + m) ** 2
        sinr = (1.0 - sig2) * (beta * grow - m**2) / (1.0 - sig2 + grow * sig2 + grow / p)
        i_o = p * (sig2 * grow + (1.0 - sig2)) / grow
        gamma = m**2 / (beta * grow - m**2)
        m_all = np.full(n, m)
        psi = np.full(n, gamma)

    elif kind == "fully_distributed":
        _require(np.all(s.rho[off] == 0.0), "fully distributed case needs rho = 0 between distinct TXs")
        _require(np.all(alpha == alpha[0]), "fully distributed case needs a common alpha")
        m = float(closed_form_m_iso(alpha[0], beta))
        grow = (1.0 + m) ** 2
        scale = beta * grow - m**2
        g = np.empty((n, n))
        for j in range(n):
            for jp in range(n):
                if j == jp:
                    # rho^(j,j) = 1: the error terms coincide
                    num, den = (c0[j] + c1[j]).sum(), ((c0[j] + c1[j]) ** 2).sum()
                else:
                    num, den = np.sqrt(c0[j] * c0[jp]).sum(), (c0[j] * c0[jp]).sum()
                g[j, jp] = (num / m_total) / (grow / m**2 - den / m_total)
        sinr_num = p * (np.sqrt(c0).sum(axis=0) / n) ** 2 * scale / grow
        cross = c0[:, None, :] * c0[None, :, :]
        # diagonal: c0^2 + c2^2 = c0 since the errors coincide
        cross[np.arange(n), np.arange(n)] = c0
        bracket = 2.0 * c0[:, None, :] + m * (2.0 * c0[:, None, :] - cross)
        i_o = p - p * np.einsum("jl,jlk->k", g, bracket) * scale / (n**2 * grow * m)
        sinr = sinr_num / (1.0 + i_o)
        m_all = np.full(n, m)
        psi = np.diag(g).copy()

    else:
        m_all = closed_form_m_iso(alpha, beta)
        ratio = (1.0 + m_all) / m_all
        w = np.sqrt(c0[:, None, :] * c0[None, :, :]) + np.sqrt(c1[:, None, :] * c1[None, :, :]) * s.rho
        g = (w.sum(axis=2) / m_total) / (np.outer(ratio, ratio) - (w**2).sum(axis=2) / m_total)
        psi = np.diag(g).copy()
        frac = m_all / (1.0 + m_all)
        sig = (np.sqrt(c0 / psi[:, None]) * frac[:, None]).sum(axis=0) / n
        norm = g / np.sqrt(np.outer(psi, psi))
        cross = s.rho * c2[:, None, :] * c2[None, :, :] + c0[:, None, :] * c0[None, :, :]
        bracket = (2.0 * c0[:, None, :] / n**2) * frac[:, None, None] - cross * np.outer(frac, frac)[:, :, None] / n**2
        i_o = p - p * np.einsum("jl,jlk->k", norm, bracket)
        sinr = p * sig**2 / (1.0 + i_o)

    sinr = np.asarray(sinr, dtype=float) * np.ones(s.k_users)
    i_o = np.asarray(i_o, dtype=float) * np.ones(s.k_users)
    m_grid = np.repeat(np.asarray(m_all, dtype=float)[:, None], s.k_users, axis=1)
    return DetEquivReport(
        sinr_o=sinr,
        i_o=i_o,
        phi=m_grid / n,
        psi_o=np.asarray(psi, dtype=float),
        mu=mu,
        alpha=alpha,
        sum_rate_o=float(np.log2(1.0 + sinr).sum()),
        m=m_grid,
        gamma_block=np.asarray(psi, dtype=float) / n,
        method=kind,
    )


def write_report_csv(report, path, metadata=None):
    """One row per user (``k, sinr_o, i_o``) after a ``#`` metadata preamble."""
    meta = {
        "alpha": " ".join(repr(float(a)) for a in report.alpha),
        "mu": " ".join(repr(float(m)) for m in report.mu),
        "method": report.method,
        "sum_rate_o": repr(report.sum_rate_o),
    }
    meta.update(metadata or {})
    with open(path, "w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["k", "sinr_o", "i_o"])
        for k, (sinr, i_o) in enumerate(zip(report.sinr_o, report.i_o)):
            writer.writerow([k, repr(float(sinr)), repr(float(i_o))])

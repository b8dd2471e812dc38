"""Per-TX regularized zero-forcing, global precoder assembly and Monte-Carlo rates."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import sample_channel
from .exceptions import DegenerateChannelError

__all__ = [
    "PrecoderParams",
    "McEstimate",
    "rzf_precoder",
    "assemble_global",
    "empirical_sinr",
    "monte_carlo",
    "trial_streams",
]

log = logging.getLogger(__name__)

_MAX_RESAMPLES = 100


@dataclass(frozen=True)
class PrecoderParams:
    """Regularization coefficients and power scalings, one per TX."""

    alpha: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if alpha.shape != mu.shape:
            raise ValueError(f"alpha {alpha.shape} and mu {mu.shape} differ in length")
        if np.any(alpha <= 0) or np.any(~np.isfinite(alpha)):
            raise ValueError("regularization coefficients must be positive")
        if np.any(mu <= 0) or np.any(~np.isfinite(mu)):
            raise ValueError("power scalings must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class McEstimate:
    """Empirical per-user SINR and ergodic sum rate (bits/s/Hz)."""

    per_user_sinr_mean: np.ndarray
    sum_rate: float
    std_error: float
    trials: int
    resampled: int = 0
    per_trial_rates: np.ndarray | None = None


def rzf_precoder(h_hat_j, alpha_j, p):
    """RZF precoder of one TX built from its own estimate.

    ``T = (H^H H + M alpha I)^{-1} H^H * sqrt(p / Psi)`` where ``Psi`` is the
    squared Frobenius norm of the unnormalised precoder, so that
    ``||T||_F^2 == p``.

    Parameters
    ----------
    h_hat_j : ndarray, shape ``(K, M)``
    alpha_j : float
        Positive regularization coefficient.
    p : float
        Target squared Frobenius norm.

    Returns
    -------
    ndarray, shape ``(M, K)``
    """
    if alpha_j <= 0:
        raise ValueError(f"alpha must be positive, got {alpha_j}")
    m_total = h_hat_j.shape[1]
    h_herm = h_hat_j.conj().T
    gram = h_herm @ h_hat_j
    gram[np.diag_indices(m_total)] += m_total * alpha_j
    raw = scipy.linalg.solve(gram, h_herm, assume_a="pos", check_finite=False)
    psi = float(np.vdot(raw, raw).real)
    if not (psi > 0 and math.isfinite(psi)):
        raise DegenerateChannelError(f"power normalization Psi={psi} is degenerate")
    return raw * math.sqrt(p / psi)


def assemble_global(t_list, mu, m_tx=None):
    """Stack row block ``j`` of ``mu[j] * t_list[j]`` into the global precoder.

    ``m_tx`` defaults to ``M // n``.
    """
    t_list = [np.asarray(t) for t in t_list]
    mu = np.asarray(mu, dtype=float)
    n = len(t_list)
    if mu.shape != (n,):
        raise ValueError(f"mu has shape {mu.shape}, expected {(n,)}")
    shape = t_list[0].shape
    if any(t.shape != shape for t in t_list):
        raise ValueError("per-TX precoders differ in shape")
    m_total = shape[0]
    if m_tx is None:
        if m_total % n:
            raise ValueError(f"M={m_total} is not divisible by n={n}")
        m_tx = m_total // n
    if m_tx * n != m_total:
        raise ValueError(f"n*m_tx={n * m_tx} does not match M={m_total}")
    out = np.empty(shape, dtype=np.result_type(*t_list))
    for j, t in enumerate(t_list):
        rows = slice(j * m_tx, (j + 1) * m_tx)
        out[rows] = mu[j] * t[rows]
    return out


def empirical_sinr(h_true, t_global):
    """SINR of every user for channel rows ``h_k^H`` and precoder columns ``t_k``."""
    gains = np.abs(h_true @ t_global) ** 2
    signal = np.diag(gains).copy()
    interference = gains.sum(axis=1) - signal
    return signal / (1.0 + np.maximum(interference, 0.0))


def trial_streams(seed, trials):
    """Independent generators, one per trial, spawned from ``seed``.

    Trial ``i`` always receives the same stream regardless of how many
    trials are requested or how they are scheduled.
    """
    children = np.random.SeedSequence(seed).spawn(trials)
    return [np.random.default_rng(c) for c in children]


def _one_trial(s, params, rng, renormalize):
    for attempt in range(_MAX_RESAMPLES):
        draw = sample_channel(s, rng)
        try:
            t_list = [
                rzf_precoder(draw.h_hat[j], params.alpha[j], s.power_total) for j in range(s.n)
            ]
        except DegenerateChannelError:
            continue
        t_global = assemble_global(t_list, params.mu, s.m_tx)
        if renormalize:
            t_global *= math.sqrt(s.power_total) / np.linalg.norm(t_global)
        sinr = empirical_sinr(draw.h_true, t_global)
        return sinr, attempt
    raise DegenerateChannelError(f"{_MAX_RESAMPLES} consecutive degenerate draws")


def monte_carlo(s, params, trials, seed=None, *, renormalize=False, workers=1, keep_trials=False):
    """Ergodic sum rate of the distributed RZF scheme by simulation.

    Each TX ``j`` builds its precoder from its own estimate ``h_hat[j]``
    with regularization ``params.alpha[j]`` and unit-``P`` normalization;
    the blocks are then scaled by ``params.mu``.

    Parameters
    ----------
    s : Scenario
    params : PrecoderParams
    trials : int
    seed : int, optional
        Defaults to ``s.rng_seed``.
    renormalize : bool
        Rescale every draw's global precoder to total power exactly ``P``.
    workers : int
        Thread count. Results do not depend on it.
    keep_trials : bool
        Attach the per-trial sum rates to the result.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if params.alpha.shape != (s.n,):
        raise ValueError(f"params describe {params.alpha.shape[0]} TXs, scenario has {s.n}")
    seed = s.rng_seed if seed is None else seed
    streams = trial_streams(seed, trials)

    def run(i):
        return _one_trial(s, params, streams[i], renormalize)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(i) for i in range(trials)]

    sinr = np.array([r[0] for r in results])
    resampled = sum(r[1] for r in results)
    if resampled:
        log.warning("resampled %d degenerate channel draws", resampled)
    rates = np.log2(1.0 + sinr).sum(axis=1)
    sum_rate = math.fsum(rates) / trials
    std_error = float(np.std(rates, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    sinr_mean = np.array([math.fsum(col) / trials for col in sinr.T])
    return McEstimate(
        per_user_sinr_mean=sinr_mean,
        sum_rate=sum_rate,
        std_error=std_error,
        trials=trials,
        resampled=resampled,
        per_trial_rates=rates if keep_trials else None,
    )

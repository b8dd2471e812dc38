"""Static problem data for a cooperative broadcast channel with distributed CSIT.

A :class:`Scenario` fixes the dimensions, the total power and its split
among transmitters, the per-user correlation matrices ``theta[k]``, the CSIT
error levels ``sigma[j, k]`` and the error correlations ``rho[j, j', k]``.
Scenarios are immutable; use :meth:`Scenario.replace` to derive variants.

Scenario files are TOML with the sections ``[dimensions]``, ``[power]``,
``[csit]``, ``[theta]`` and ``[seed]``. See ``README.md`` for the key list.
"""

import dataclasses
import hashlib
import math
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import tomli
import tomli_w

from .exceptions import ScenarioError

__all__ = [
    "Scenario",
    "CsitCoefficients",
    "load_scenario",
    "write_scenario",
    "csit_coefficients",
    "example1_mapping",
    "validate_correlation",
    "psd_factor",
    "exponential_theta",
    "make_scenario",
    "table_one",
    "db_to_linear",
    "linear_to_db",
]

_PSD_TOL = 1e-10
_SYM_TOL = 1e-12


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(value)


def exponential_theta(m_total, r):
    """Exponential correlation matrices ``theta[k][a, b] = r_k ** |a - b|``.

    Parameters
    ----------
    m_total : int
        Matrix side.
    r : float or array_like
        Correlation coefficient(s) in ``[0, 1)``, scalar or one per user.

    Returns
    -------
    ndarray, shape ``(len(r), m_total, m_total)``
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    idx = np.arange(m_total)
    dist = np.abs(idx[:, None] - idx[None, :])
    return (r[:, None, None] ** dist[None, :, :]).astype(complex)


def psd_factor(r_mat, tol=_PSD_TOL):
    """Lower-triangular factor ``L`` with ``L @ L.T == r_mat`` for a PSD matrix.

    Unlike :func:`numpy.linalg.cholesky` this accepts rank-deficient input
    (e.g. all-ones matrices, the ``rho = 1`` case): a pivot that vanishes
    within ``tol`` yields a zero column.

    Raises
    ------
    ScenarioError
        If ``r_mat`` has an eigenvalue below ``-tol``.
    """
    r_mat = np.asarray(r_mat, dtype=float)
    eig_min = float(np.linalg.eigvalsh(r_mat).min())
    if eig_min < -tol:
        raise ScenarioError(f"matrix is not PSD (min eigenvalue {eig_min:.3e})")
    size = r_mat.shape[0]
    factor = np.zeros_like(r_mat)
    scale = max(1.0, float(np.abs(r_mat).max()))
    for col in range(size):
        pivot = r_mat[col, col] - factor[col, :col] @ factor[col, :col]
        if pivot <= tol * scale:
            continue
        root = math.sqrt(pivot)
        factor[col, col] = root
        below = slice(col + 1, size)
        factor[below, col] = (
            r_mat[below, col] - factor[below, :col] @ factor[col, :col]
        ) / root
    return factor


def _broadcast_sigma(sigma, n, k_users):
    arr = np.asarray(sigma, dtype=float)
    if arr.ndim == 0:
        return np.full((n, k_users), float(arr))
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ScenarioError(f"sigma vector has length {arr.shape[0]}, expected n={n}")
        return np.repeat(arr[:, None], k_users, axis=1)
    if arr.shape != (n, k_users):
        raise ScenarioError(f"sigma grid has shape {arr.shape}, expected {(n, k_users)}")
    return arr.copy()


def _broadcast_rho(rho, n, k_users):
    arr = np.asarray(rho, dtype=float)
    if arr.ndim == 0:
        out = np.full((n, n, k_users), float(arr))
        out[np.arange(n), np.arange(n), :] = 1.0
        return out
    if arr.ndim == 2:
        if arr.shape != (n, n):
            raise ScenarioError(f"rho matrix has shape {arr.shape}, expected {(n, n)}")
        return np.repeat(arr[:, :, None], k_users, axis=2)
    if arr.shape != (n, n, k_users):
        raise ScenarioError(f"rho tensor has shape {arr.shape}, expected {(n, n, k_users)}")
    return arr.copy()


def _readonly(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True, eq=False)
class Scenario:
    """Full description of one D-CSIT CoMP instance.

    Build through :func:`make_scenario`, :func:`table_one` or
    :func:`load_scenario` rather than directly: the constructor expects the
    CSIT arrays already expanded to their full shapes.

    Attributes
    ----------
    n : int
        Number of transmitters.
    m_tx : int
        Antennas per transmitter.
    k_users : int
        Number of single-antenna receivers.
    power_total : float
        Linear sum power ``P``.
    sigma : ndarray, shape ``(n, k_users)``
        CSIT error levels, entries in ``[0, 1]``.
    rho : ndarray, shape ``(n, n, k_users)``
        Cross-TX error correlations; unit diagonal, symmetric, PSD per user.
    per_tx_power : ndarray, shape ``(n,)``
        Per-TX power budgets summing to ``power_total``.
    rng_seed : int
    theta_kind : {"identity", "exponential", "matrix"}
    theta_r : ndarray or None
        Per-user coefficients for ``theta_kind == "exponential"``.
    theta_matrices : ndarray or None
        Explicit ``(k_users, M, M)`` matrices for ``theta_kind == "matrix"``.
    theta_path : str or None
        File the explicit matrices were read from, kept for round trips.
    """

    n: int
    m_tx: int
    k_users: int
    power_total: float
    sigma: np.ndarray
    rho: np.ndarray
    per_tx_power: np.ndarray
    rng_seed: int = 0
    theta_kind: str = "identity"
    theta_r: np.ndarray | None = None
    theta_matrices: np.ndarray | None = None
    theta_path: str | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("n", "m_tx", "k_users"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ScenarioError(f"{name} must be a positive integer, got {value!r}")
            set_(self, name, int(value))
        if self.m_total < self.k_users:
            raise ScenarioError(
                f"beta = M/K = {self.m_total}/{self.k_users} < 1; need at least as many antennas as users"
            )
        power = float(self.power_total)
        if not (math.isfinite(power) and power > 0):
            raise ScenarioError(f"power_total must be positive and finite, got {power}")
        set_(self, "power_total", power)
        set_(self, "rng_seed", int(self.rng_seed))

        sigma = _readonly(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (self.n, self.k_users):
            raise ScenarioError(f"sigma has shape {sigma.shape}, expected {(self.n, self.k_users)}")
        if np.any(~np.isfinite(sigma)) or sigma.min() < 0 or sigma.max() > 1:
            raise ScenarioError("sigma entries must lie in [0, 1]")
        set_(self, "sigma", sigma)

        rho = _readonly(np.asarray(self.rho, dtype=float))
        if rho.shape != (self.n, self.n, self.k_users):
            raise ScenarioError(f"rho has shape {rho.shape}, expected {(self.n, self.n, self.k_users)}")
        if np.any(~np.isfinite(rho)) or rho.min() < 0 or rho.max() > 1:
            raise ScenarioError("rho entries must lie in [0, 1]")
        diag = rho[np.arange(self.n), np.arange(self.n), :]
        if np.any(diag != 1.0):
            raise ScenarioError("rho[j][j][k] must equal 1 for all j, k")
        asym = np.abs(rho - rho.transpose(1, 0, 2))
        if asym.max() > _SYM_TOL:
            j, jp, k = np.unravel_index(int(asym.argmax()), asym.shape)
            raise ScenarioError(
                f"rho is not symmetric: rho[{j}][{jp}][{k}]={rho[j, jp, k]} "
                f"but rho[{jp}][{j}][{k}]={rho[jp, j, k]}"
            )
        set_(self, "rho", rho)

        per_tx = _readonly(np.asarray(self.per_tx_power, dtype=float))
        if per_tx.shape != (self.n,):
            raise ScenarioError(f"per_tx_power has shape {per_tx.shape}, expected {(self.n,)}")
        if np.any(per_tx <= 0) or np.any(~np.isfinite(per_tx)):
            raise ScenarioError("per_tx_power entries must be positive")
        if not math.isclose(math.fsum(per_tx), power, rel_tol=1e-9):
            raise ScenarioError(
                f"per_tx_power sums to {math.fsum(per_tx)}, expected power_total={power}"
            )
        set_(self, "per_tx_power", per_tx)

        self._validate_theta()
        # raises on the first non-PSD R_k
        validate_correlation(self)

    def _validate_theta(self):
        set_ = object.__setattr__
        kind = self.theta_kind
        if kind == "identity":
            set_(self, "theta_r", None)
            set_(self, "theta_matrices", None)
        elif kind == "exponential":
            if self.theta_r is None:
                raise ScenarioError("exponential theta needs coefficients r")
            r = np.asarray(self.theta_r, dtype=float)
            r = np.full(self.k_users, float(r)) if r.ndim == 0 else r
            if r.shape != (self.k_users,):
                raise ScenarioError(f"theta r has shape {r.shape}, expected {(self.k_users,)}")
            if r.min() < 0 or r.max() >= 1:
                raise ScenarioError("exponential theta coefficients must lie in [0, 1)")
            set_(self, "theta_r", _readonly(r))
            set_(self, "theta_matrices", None)
        elif kind == "matrix":
            mats = np.asarray(self.theta_matrices, dtype=complex)
            shape = (self.k_users, self.m_total, self.m_total)
            if mats.shape != shape:
                raise ScenarioError(f"theta matrices have shape {mats.shape}, expected {shape}")
            for k, mat in enumerate(mats):
                norm = max(1.0, float(np.abs(mat).max()))
                if np.abs(mat - mat.conj().T).max() > 1e-10 * norm:
                    raise ScenarioError(f"theta[{k}] is not Hermitian")
                eig_min = float(np.linalg.eigvalsh(mat).min())
                if eig_min < -_PSD_TOL * norm:
                    raise ScenarioError(f"theta[{k}] is not PSD (min eigenvalue {eig_min:.3e})")
            set_(self, "theta_matrices", _readonly(mats))
            set_(self, "theta_r", None)
        else:
            raise ScenarioError(f"unknown theta kind {kind!r}")

    @property
    def m_total(self):
        return self.n * self.m_tx

    @property
    def beta(self):
        return self.m_total / self.k_users

    @property
    def sigma2(self):
        return self.sigma**2

    @property
    def isotropic(self):
        return self.theta_kind == "identity" or (
            self.theta_kind == "exponential" and not np.any(self.theta_r)
        )

    @cached_property
    def theta(self):
        """Correlation matrices as a read-only ``(K, M, M)`` complex array."""
        if self.theta_kind == "identity":
            mats = np.broadcast_to(np.eye(self.m_total, dtype=complex), (self.k_users, self.m_total, self.m_total))
        elif self.theta_kind == "exponential":
            mats = exponential_theta(self.m_total, self.theta_r)
        else:
            mats = self.theta_matrices
        return _readonly(mats)

    @cached_property
    def theta_sqrt(self):
        """Hermitian square roots of ``theta`` (read-only)."""
        from .channel import sqrt_psd

        if self.isotropic:
            return self.theta
        return _readonly(np.stack([sqrt_psd(t) for t in self.theta]))

    @cached_property
    def correlation_factors(self):
        return validate_correlation(self)

    def block(self, j):
        """Antenna index slice of transmitter ``j``."""
        return slice(j * self.m_tx, (j + 1) * self.m_tx)

    def replace(self, **changes):
        """Copy with some fields replaced; the result is re-validated."""
        return dataclasses.replace(self, **changes)

    def digest(self):
        """Short SHA-256 hex digest of every numeric field."""
        h = hashlib.sha256()
        h.update(repr((self.n, self.m_tx, self.k_users, self.power_total, self.rng_seed, self.theta_kind)).encode())
        for arr in (self.sigma, self.rho, self.per_tx_power, self.theta_r, self.theta_matrices):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


class CsitCoefficients(NamedTuple):
    """Per (TX, user) CSIT mixing weights, each of shape ``(n, K)``."""

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray


def csit_coefficients(s):
    """``c0 = 1 - sigma^2``, ``c1 = sigma^2``, ``c2 = sigma sqrt(1 - sigma^2)``."""
    sigma = np.asarray(s.sigma if isinstance(s, Scenario) else s, dtype=float)
    c1 = sigma**2
    c0 = 1.0 - c1
    c2 = sigma * np.sqrt(c0)
    return CsitCoefficients(c0, c1, c2)


def example1_mapping(sigma_fb, sigma_bh):
    """Map feedback and backhaul quality to ``(sigma_local, sigma_remote, rho)``.

    The serving TX sees the feedback estimate with error level
    ``sigma_fb``; a neighbour receives it over a backhaul adding an
    independent degradation of level ``sigma_bh``.

    >>> [round(v, 6) for v in example1_mapping(0.1, 0.2)]
    [0.1, 0.222711, 0.439941]
    """
    for name, value in (("sigma_fb", sigma_fb), ("sigma_bh", sigma_bh)):
        if not 0.0 <= value < 1.0:
            raise ValueError(f"{name} must lie in [0, 1), got {value}")
    # 1 - (1 - a)(1 - b) expanded to avoid cancellation for small errors
    sigma_remote = math.sqrt(sigma_fb**2 + sigma_bh**2 - sigma_fb**2 * sigma_bh**2)
    if sigma_remote == 0.0:
        # both estimates exact, hence identical
        return float(sigma_fb), 0.0, 1.0
    rho = min(1.0, sigma_fb * math.sqrt(1.0 - sigma_bh**2) / sigma_remote)
    return float(sigma_fb), sigma_remote, rho


def validate_correlation(s):
    """Per-user factors ``L_k`` with ``L_k @ L_k.T == R_k``.

    ``R_k[j, j'] = rho[j, j', k]`` is the TX-correlation matrix of the
    error variables of user ``k``.

    Raises
    ------
    ScenarioError
        Naming the first user whose ``R_k`` is not PSD.
    """
    factors = []
    for k in range(s.k_users):
        r_k = s.rho[:, :, k]
        try:
            factors.append(psd_factor(r_k))
        except ScenarioError as exc:
            raise ScenarioError(f"R_k not PSD for k={k}: {exc}") from None
    return factors


def make_scenario(
    n,
    m_tx,
    k_users,
    *,
    power=None,
    power_db=None,
    sigma=None,
    sigma2=None,
    rho=1.0,
    per_tx_power=None,
    theta="identity",
    theta_r=None,
    seed=0,
):
    """Build a :class:`Scenario` with broadcasting of the CSIT parameters.

    ``sigma`` (or ``sigma2``) may be a scalar, a per-TX vector or an
    ``(n, K)`` grid. ``rho`` may be a scalar applied off the diagonal, an
    ``(n, n)`` matrix or an ``(n, n, K)`` tensor. ``theta`` is
    ``"identity"``, ``"exponential"`` (with ``theta_r``) or an explicit
    ``(K, M, M)`` array. Exactly one of ``power``/``power_db`` is required.
    """
    if (power is None) == (power_db is None):
        raise ScenarioError("give exactly one of power and power_db")
    if power is None:
        power = float(db_to_linear(power_db))
    if sigma is None and sigma2 is None:
        sigma = 0.0
    elif sigma is None:
        sigma = np.sqrt(np.asarray(sigma2, dtype=float))
    elif sigma2 is not None:
        raise ScenarioError("give at most one of sigma and sigma2")
    sigma = _broadcast_sigma(sigma, n, k_users)
    rho = _broadcast_rho(rho, n, k_users)
    if per_tx_power is None:
        per_tx_power = np.full(n, power / n)
    kwargs = dict(theta_kind="identity")
    if isinstance(theta, str):
        if theta == "exponential":
            kwargs = dict(theta_kind="exponential", theta_r=theta_r)
        elif theta != "identity":
            raise ScenarioError(f"unknown theta kind {theta!r}")
    else:
        kwargs = dict(theta_kind="matrix", theta_matrices=np.asarray(theta))
    return Scenario(
        n=n,
        m_tx=m_tx,
        k_users=k_users,
        power_total=power,
        sigma=sigma,
        rho=rho,
        per_tx_power=per_tx_power,
        rng_seed=seed,
        **kwargs,
    )


TABLE_ONE_RHO = {"fully_distributed": 0.0, "dcsit": 0.81, "centralized": 1.0}
TABLE_ONE_SIGMA2 = {"symmetric": (0.1, 0.1, 0.1), "asymmetric": (0.01, 0.16, 0.49)}


def table_one(csit="dcsit", accuracy="symmetric", *, k_users=30, beta=1.0, power_db=20.0, rho=None, seed=0):
    """Isotropic three-TX setting used throughout the simulations.

    ``csit`` selects the error correlation (0, 0.81 or 1) unless ``rho`` is
    given explicitly; ``accuracy`` selects the per-TX error variances.
    ``k_users * beta`` must be a multiple of 3.
    """
    m_total = k_users * beta
    if m_total != int(m_total) or int(m_total) % 3:
        raise ScenarioError(f"M = beta*K = {m_total} is not divisible among 3 TXs")
    if csit not in TABLE_ONE_RHO:
        raise ScenarioError(f"unknown CSIT configuration {csit!r}; expected one of {sorted(TABLE_ONE_RHO)}")
    if accuracy not in TABLE_ONE_SIGMA2:
        raise ScenarioError(f"unknown accuracy setting {accuracy!r}; expected one of {sorted(TABLE_ONE_SIGMA2)}")
    if rho is None:
        rho = TABLE_ONE_RHO[csit]
    return make_scenario(
        3,
        int(m_total) // 3,
        k_users,
        power_db=power_db,
        sigma2=TABLE_ONE_SIGMA2[accuracy],
        rho=rho,
        seed=seed,
    )


# -- file I/O -----------------------------------------------------------------


def _section(doc, name):
    sec = doc.get(name)
    if sec is None:
        raise ScenarioError(f"missing section [{name}]")
    if not isinstance(sec, dict):
        raise ScenarioError(f"[{name}] must be a table")
    return sec


def _require(sec, key, section):
    if key not in sec:
        raise ScenarioError(f"missing key {key!r} in [{section}]")
    return sec[key]


def load_scenario(path):
    """Read and validate a TOML scenario file.

    Raises
    ------
    ScenarioError
        On parse errors, missing keys or any invariant violation.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from None

    dims = _section(doc, "dimensions")
    n = _require(dims, "n_tx", "dimensions")
    m_tx = _require(dims, "antennas_per_tx", "dimensions")
    k_users = _require(dims, "users", "dimensions")

    power_sec = _section(doc, "power")
    if ("total" in power_sec) == ("total_db" in power_sec):
        raise ScenarioError("[power] needs exactly one of 'total' (linear) or 'total_db'")
    power = float(power_sec["total"]) if "total" in power_sec else float(db_to_linear(power_sec["total_db"]))
    per_tx = power_sec.get("per_tx")
    if per_tx is None and "per_tx_db" in power_sec:
        per_tx = db_to_linear(power_sec["per_tx_db"])
    if per_tx is None:
        per_tx = np.full(int(n), power / n)

    csit = _section(doc, "csit")
    if ("sigma" in csit) == ("sigma2" in csit):
        raise ScenarioError("[csit] needs exactly one of 'sigma' or 'sigma2'")
    sigma = csit["sigma"] if "sigma" in csit else np.sqrt(np.asarray(csit["sigma2"], dtype=float))
    rho = csit.get("rho", 1.0)

    theta_sec = doc.get("theta", {"kind": "identity"})
    kind = theta_sec.get("kind", "identity")
    theta_kwargs = {"theta_kind": kind}
    if kind == "exponential":
        theta_kwargs["theta_r"] = _require(theta_sec, "r", "theta")
    elif kind == "file":
        rel = _require(theta_sec, "path", "theta")
        blob = (path.parent / rel) if not Path(rel).is_absolute() else Path(rel)
        try:
            mats = np.load(blob)
        except OSError as exc:
            raise ScenarioError(f"cannot read theta blob {blob}: {exc}") from None
        theta_kwargs = {"theta_kind": "matrix", "theta_matrices": mats, "theta_path": rel}
    elif kind != "identity":
        raise ScenarioError(f"unknown theta kind {kind!r}")

    seed = doc.get("seed", {}).get("value", 0)
    try:
        return Scenario(
            n=n,
            m_tx=m_tx,
            k_users=k_users,
            power_total=power,
            sigma=_broadcast_sigma(sigma, int(n), int(k_users)),
            rho=_broadcast_rho(rho, int(n), int(k_users)),
            per_tx_power=per_tx,
            rng_seed=seed,
            **theta_kwargs,
        )
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def write_scenario(s, path):
    """Write ``s`` as TOML so that :func:`load_scenario` restores it exactly.

    Power is written in linear units and CSIT arrays in full so the round
    trip is bit-exact. Explicit theta matrices go to a ``.npy`` side file.
    """
    path = Path(path)
    doc = {
        "dimensions": {"n_tx": s.n, "antennas_per_tx": s.m_tx, "users": s.k_users},
        "power": {"total": s.power_total, "per_tx": s.per_tx_power.tolist()},
        "csit": {"sigma": s.sigma.tolist(), "rho": s.rho.tolist()},
        "seed": {"value": s.rng_seed},
    }
    if s.theta_kind == "identity":
        doc["theta"] = {"kind": "identity"}
    elif s.theta_kind == "exponential":
        doc["theta"] = {"kind": "exponential", "r": s.theta_r.tolist()}
    else:
        rel = s.theta_path or (path.stem + "_theta.npy")
        blob = path.parent / rel if not Path(rel).is_absolute() else Path(rel)
        np.save(blob, np.asarray(s.theta_matrices))
        doc["theta"] = {"kind": "file", "path": rel}
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)
    return path

"""Sampling of true channels and the correlated TX-local estimates.

Row ``k`` of every ``K x M`` matrix is a conjugated column vector: the true
channel matrix has rows ``h_k^H`` with ``h_k = sqrt(M) theta_k^{1/2} z_k``.
The stored ``z`` and ``q`` arrays hold the *unconjugated* vectors ``z_k``
and ``q_k^(j)`` row by row.
"""

import struct
from dataclasses import dataclass

import numpy as np

__all__ = ["ChannelDraw", "sample_channel", "sqrt_psd", "complex_gaussian", "dump_draw", "load_draw"]


def sqrt_psd(theta, herm_tol=1e-12, neg_tol=1e-8):
    """Hermitian PSD square root through an eigendecomposition.

    Eigenvalues in ``[-neg_tol, 0)`` are clamped to zero.

    Raises
    ------
    ValueError
        If ``theta`` is not Hermitian within ``herm_tol`` (relative to its
        largest entry) or has an eigenvalue below ``-neg_tol``.
    """
    theta = np.asarray(theta)
    scale = max(1.0, float(np.abs(theta).max()))
    if np.abs(theta - theta.conj().T).max() > herm_tol * scale:
        raise ValueError("input is not Hermitian")
    vals, vecs = np.linalg.eigh(theta)
    if vals.min() < -neg_tol * scale:
        raise ValueError(f"input is not PSD (min eigenvalue {vals.min():.3e})")
    vals = np.sqrt(np.clip(vals, 0.0, None))
    out = (vecs * vals) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)


def complex_gaussian(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian entries of the given variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True, eq=False)
class ChannelDraw:
    """One realisation of the true channel and all ``n`` TX-local estimates.

    Attributes
    ----------
    h_true : ndarray, shape ``(K, M)``
    h_hat : ndarray, shape ``(n, K, M)``
        ``h_hat[j]`` is the estimate held by TX ``j``.
    z : ndarray, shape ``(K, M)``
    q : ndarray, shape ``(n, K, M)``
    """

    h_true: np.ndarray
    h_hat: np.ndarray
    z: np.ndarray
    q: np.ndarray

    @property
    def n(self):
        return self.h_hat.shape[0]

    def errors(self, theta_sqrt=None):
        """Error vectors ``delta_k^(j) = sqrt(M) theta_k^{1/2} q_k^(j)`` (unconjugated rows)."""
        m_total = self.z.shape[1]
        if theta_sqrt is None:
            return np.sqrt(m_total) * self.q
        return np.sqrt(m_total) * np.einsum("kab,jkb->jka", theta_sqrt, self.q)


def sample_channel(s, rng):
    """Draw one :class:`ChannelDraw` for scenario ``s``.

    Entries of ``z`` and of the error variables are i.i.d. CN(0, 1/M); the
    error variables of user ``k`` are mixed across TXs with the factor of
    ``R_k`` so that ``E[q_k^(j) q_k^(j')^H] = rho[j, j', k] I / M``.

    Parameters
    ----------
    s : Scenario
    rng : numpy.random.Generator
    """
    n, k_users, m_total = s.n, s.k_users, s.m_total
    var = 1.0 / m_total
    z = complex_gaussian(rng, (k_users, m_total), var)
    g = complex_gaussian(rng, (n, k_users, m_total), var)
    factors = np.stack(s.correlation_factors)  # (K, n, n)
    q = np.einsum("kji,ikm->jkm", factors, g)

    root_m = np.sqrt(m_total)
    if s.isotropic:
        h = root_m * z
        delta = root_m * q
    else:
        sq = s.theta_sqrt
        h = root_m * np.einsum("kab,kb->ka", sq, z)
        delta = root_m * np.einsum("kab,jkb->jka", sq, q)

    sigma = s.sigma[:, :, None]
    h_hat = np.sqrt(1.0 - sigma**2) * h[None] + sigma * delta
    return ChannelDraw(h_true=h.conj(), h_hat=h_hat.conj(), z=z, q=q)


_MAGIC = b"RZFDRAW1"
_DTYPES = {0: np.complex64, 1: np.complex128}


def dump_draw(draw, path, dtype=np.complex128):
    """Write a draw as ``magic | dtype code | n, K, M (uint32 LE) | payload``.

    The payload is ``h_true, z, h_hat, q`` in row-major order.
    """
    code = {np.dtype(v): k for k, v in _DTYPES.items()}[np.dtype(dtype)]
    n, k_users, m_total = draw.h_hat.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B3I", code, n, k_users, m_total))
        for arr in (draw.h_true, draw.z, draw.h_hat, draw.q):
            fh.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def load_draw(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a channel draw file")
        code, n, k_users, m_total = struct.unpack("<B3I", fh.read(13))
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        payload = np.frombuffer(fh.read(), dtype=dtype)
    sizes = [k_users * m_total, k_users * m_total, n * k_users * m_total, n * k_users * m_total]
    parts = np.split(payload, np.cumsum(sizes)[:-1])
    h_true, z = (p.reshape(k_users, m_total).astype(np.complex128) for p in parts[:2])
    h_hat, q = (p.reshape(n, k_users, m_total).astype(np.complex128) for p in parts[2:])
    return ChannelDraw(h_true=h_true, h_hat=h_hat, z=z, q=q)

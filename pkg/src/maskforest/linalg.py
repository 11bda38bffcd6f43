"""Dense matrix helpers and construction of the masking transformation.

Matrices are plain 2-D ``float64`` numpy arrays. The masking matrix is
``M = Q @ S @ Q2`` with ``Q, Q2`` Haar-random orthogonal matrices and ``S``
diagonal with entries in ``(1, T)``. ``Q`` and ``S`` are drawn, in that
order, from one stream seeded with the shared seed; ``Q2`` comes from a
fresh stream seeded with ``seed + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detrng import MASK64, RngStream

DEFAULT_NOISE_SIGMA = 1e6


class ShapeError(ValueError):
    pass


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def householder_qr(a):
    """QR factorisation of a square matrix by Householder reflections.

    Returns ``(Q, R)`` with ``Q`` orthogonal and ``R`` upper triangular.
    """
    a = as_matrix(a)
    n, cols = a.shape
    if n != cols:
        raise ShapeError(f"householder_qr expects a square matrix, got {a.shape}")
    r = a.copy()
    q = np.eye(n)
    for k in range(n - 1):
        x = r[k:, k]
        norm_x = np.sqrt(x @ x)
        if norm_x == 0.0:
            continue
        v = x.copy()
        # add along the sign of x[0] to avoid cancellation
        v[0] += norm_x if x[0] >= 0 else -norm_x
        v /= np.sqrt(v @ v)
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        q[:, k:] -= 2.0 * np.outer(q[:, k:] @ v, v)
        r[k + 1:, k] = 0.0
    return q, r


def random_orthogonal(d: int, stream: RngStream) -> np.ndarray:
    """Haar-distributed orthogonal ``d x d`` matrix (Mezzadri's recipe).

    Draws ``d*d`` standard normals row-major from ``stream``, factors them,
    and flips each column ``j`` of Q by ``sign(R[j, j])`` with sign(0) = +1.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    z = np.array(stream.gaussians(d * d), dtype=np.float64).reshape(d, d)
    q, r = householder_qr(z)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def random_scaling(d: int, stream: RngStream, t_param: float) -> np.ndarray:
    """Diagonal matrix with entries uniform in the open interval ``(1, t_param)``."""
    if not t_param > 1:
        raise ValueError(f"T must be > 1, got {t_param}")
    diag = np.empty(d)
    for i in range(d):
        u = stream.uniform01()
        while u == 0.0:
            u = stream.uniform01()
        diag[i] = 1.0 + (t_param - 1.0) * u
    return np.diag(diag)


@dataclass(frozen=True)
class MaskingMatrix:
    m: np.ndarray
    t_param: float
    scaling: np.ndarray  # diagonal of S, kept for inspection by tests

    @property
    def dims(self) -> int:
        return self.m.shape[0]

    def apply(self, x) -> np.ndarray:
        return matmul(x, self.m)


def build_masking_matrix(d: int, xi: int, t_param: float) -> MaskingMatrix:
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if not t_param > 1:
        raise ValueError(f"T must be > 1, got {t_param}")
    stream = RngStream(xi)
    q = random_orthogonal(d, stream)
    s = random_scaling(d, stream, t_param)
    q2 = random_orthogonal(d, RngStream((xi + 1) & MASK64))
    return MaskingMatrix(m=q @ s @ q2, t_param=float(t_param), scaling=np.diag(s).copy())


def noise_matrix(n_rows: int, d: int, sigma: float = DEFAULT_NOISE_SIGMA,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """i.i.d. N(0, sigma^2) matrix from a client-private generator.

    Never feed this from the shared-seed stream: the noise must stay private
    to its client. With ``rng=None`` a generator is seeded from OS entropy.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    rng = rng if rng is not None else np.random.default_rng()
    return rng.normal(0.0, sigma, size=(n_rows, d))

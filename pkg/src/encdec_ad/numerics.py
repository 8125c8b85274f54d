"""Dense linear-algebra and statistics kernels.

Matrices are plain ``float64`` numpy arrays. Randomness comes from numpy's
``PCG64`` bit generator, whose output stream is fixed for a given seed on
every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CovarianceDegenerateError, NoVarianceError, ShapeError

PC_TOL = 1e-10
PC_MAX_ITER = 10_000
PC_START_SEED = 20160701


def as_matrix(a, name="matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def make_rng(seed) -> np.random.Generator:
    """Seeded ``PCG64`` generator used for every random draw in the package."""
    return np.random.Generator(np.random.PCG64(seed))


def seeded_gaussian(seed, n: int, stddev: float) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if stddev <= 0:
        raise ValueError(f"stddev must be > 0, got {stddev}")
    return make_rng(seed).normal(0.0, stddev, size=n)


@dataclass(frozen=True)
class SpdFactorization:
    """Lower Cholesky factor of ``S + regularization * I``."""

    lower: np.ndarray
    regularization: float

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> np.ndarray:
        return self.lower @ self.lower.T


def _try_cholesky(s: np.ndarray):
    try:
        low = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(low)
    if not np.all(np.isfinite(low)) or np.any(d <= 0.0):
        return None
    return low


def factor_spd(s, base_regularization: float = 0.0) -> SpdFactorization:
    """Cholesky-factor ``s`` with a growing diagonal ridge.

    The ridge starts at ``base_regularization`` and is multiplied by 10 until
    the factorization succeeds. A zero starting ridge that fails is replaced by
    ``1e-12`` times the diagonal scale. The ladder gives up once the ridge
    exceeds a tenth of the mean diagonal; an all-zero diagonal counts as scale 1.
    """
    s = as_matrix(s, "S")
    n, k = s.shape
    if n != k:
        raise ShapeError(f"S must be square, got {s.shape}")
    if not np.allclose(s, s.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(s).max())):
        raise ValueError("S is not symmetric")
    if base_regularization < 0:
        raise ValueError("base_regularization must be >= 0")
    s = 0.5 * (s + s.T)
    mean_diag = float(np.mean(np.diag(s)))
    scale = mean_diag if mean_diag > 0 else 1.0
    limit = 0.1 * scale
    eps = float(base_regularization)
    eye = np.eye(n)
    while True:
        if eps > limit:
            raise CovarianceDegenerateError(
                f"covariance degenerate: ridge {eps:.3e} exceeds {limit:.3e}"
            )
        low = _try_cholesky(s + eps * eye)
        if low is not None:
            return SpdFactorization(lower=low, regularization=eps)
        eps = eps * 10.0 if eps > 0 else 1e-12 * scale


def solve_spd(f: SpdFactorization, v) -> np.ndarray:
    """Solve ``(S + eps I) u = v``; ``v`` may be a vector or an (n, k) stack of columns."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != f.dimension:
        raise ShapeError(f"rhs has leading size {v.shape[0]}, expected {f.dimension}")
    y = solve_triangular(f.lower, v, lower=True, check_finite=False)
    return solve_triangular(f.lower.T, y, lower=False, check_finite=False)


def mle_covariance(x) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance with denominator N (maximum likelihood)."""
    x = as_matrix(x, "data")
    mu = x.mean(axis=0)
    d = x - mu
    return mu, (d.T @ d) / x.shape[0]


@dataclass(frozen=True)
class PrincipalComponent:
    direction: np.ndarray
    explained_variance_ratio: float
    mean: np.ndarray
    eigenvalue: float
    iterations: int


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def leading_pc(data) -> PrincipalComponent:
    """Leading eigenvector of the MLE covariance by power iteration.

    Iteration stops once the eigen-residual ``||C v - lambda v||`` drops below
    ``1e-10 * lambda`` or after 10,000 iterations. The start vector is drawn
    from a fixed seed, so repeated leading eigenvalues resolve to the same
    (arbitrary) direction on every call.
    """
    x = as_matrix(data, "data")
    n, m = x.shape
    if n < 2 or m < 1:
        raise ValueError(f"need N >= 2 and m >= 1, got {x.shape}")
    mu, cov = mle_covariance(x)
    trace = float(np.trace(cov))
    if trace <= 0.0:
        raise NoVarianceError("no variance: data is constant")

    v = make_rng(PC_START_SEED).standard_normal(m)
    v /= np.linalg.norm(v)
    lam = float(v @ cov @ v)
    it = 0
    for it in range(1, PC_MAX_ITER + 1):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector orthogonal to the column space; restart on the largest diagonal axis
            v = np.zeros(m)
            v[int(np.argmax(np.diag(cov)))] = 1.0
            continue
        v = w / norm
        cv = cov @ v
        lam = float(v @ cv)
        if np.linalg.norm(cv - lam * v) <= PC_TOL * lam:
            break
    v = _fix_sign(v / np.linalg.norm(v))
    return PrincipalComponent(
        direction=v,
        explained_variance_ratio=min(1.0, max(0.0, lam / trace)),
        mean=mu,
        eigenvalue=lam,
        iterations=it,
    )

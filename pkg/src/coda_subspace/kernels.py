"""Small dense numeric primitives used throughout the package.

Dimensions here never exceed a handful, so everything favours determinism
and robustness over speed. Random routines always take an explicit
:class:`numpy.random.Generator`.
"""

import math
from typing import NamedTuple

import numpy as np

from .errors import (
    ConvergenceFailure,
    InvalidDf,
    NotPositiveDefinite,
    TooFewRows,
)

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


class EigenDecomposition(NamedTuple):
    """Eigenvalues sorted descending and the matching eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def sample_covariance(rows):
    """Unbiased sample covariance of the rows of ``rows``.

    Works on a stack of samples too: an array of shape ``(..., n, P)`` yields
    covariances of shape ``(..., P, P)``.
    """
    x = np.asarray(rows, dtype=float)
    if x.ndim < 2:
        raise ValueError("rows must be at least two-dimensional")
    n = x.shape[-2]
    if n < 2:
        raise TooFewRows(f"{n} row(s); the sample covariance needs at least 2")
    xc = x - x.mean(axis=-2, keepdims=True)
    cov = np.matmul(np.swapaxes(xc, -1, -2), xc) / (n - 1)
    return symmetrize(cov)


def _normalize_signs(vectors):
    # flip each column so that its largest-magnitude entry is positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def jacobi_eigh(m, max_sweeps=JACOBI_MAX_SWEEPS, tol=JACOBI_TOL):
    """Cyclic Jacobi eigenvalue iteration for a small symmetric matrix.

    Returns ``(values, vectors)`` in the order the rotations leave them
    (unsorted). Converged once the off-diagonal Frobenius norm drops below
    ``tol`` times the Frobenius norm of the input.

    Raises
    ------
    ConvergenceFailure
        If ``max_sweeps`` full sweeps do not reach the tolerance.
    """
    a = symmetrize(m).copy()
    p = a.shape[0]
    v = np.eye(p)
    scale = np.linalg.norm(a)
    if scale == 0.0 or p == 1:
        return np.diag(a).copy(), v
    threshold = tol * scale
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= threshold:
            return np.diag(a).copy(), v
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = a[i, j]
                if aij == 0.0:
                    continue
                theta = (a[j, j] - a[i, i]) / (2.0 * aij)
                if abs(theta) > 1e150:
                    # theta**2 would overflow; t ~ 1 / (2 theta)
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                cols = [i, j]
                a[:, cols] = a[:, cols] @ rot
                a[cols, :] = rot.T @ a[cols, :]
                a[i, j] = a[j, i] = 0.0
                v[:, cols] = v[:, cols] @ rot
    raise ConvergenceFailure(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def sym_eig_desc(m, method="lapack"):
    """Full eigendecomposition of a symmetric matrix with a canonical layout.

    Eigenvalues come out in non-increasing order (ties keep the solver's
    order) and every eigenvector is signed so that its largest-magnitude entry
    is positive. This makes every downstream quantity reproducible.

    Parameters
    ----------
    m : array_like of shape (P, P)
        Symmetric matrix; it is symmetrized as ``(m + m.T) / 2`` first.
    method : {"lapack", "jacobi"}
        ``"lapack"`` uses :func:`numpy.linalg.eigh`; ``"jacobi"`` uses the
        cyclic Jacobi iteration of :func:`jacobi_eigh`.

    Returns
    -------
    EigenDecomposition
    """
    a = symmetrize(m)
    if a.ndim != 2:
        raise ValueError("sym_eig_desc expects a single matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    if method == "lapack":
        try:
            values, vectors = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceFailure(str(exc)) from exc
    elif method == "jacobi":
        values, vectors = jacobi_eigh(a)
    else:
        raise ValueError(f"unknown eigen-solver {method!r}")
    order = np.argsort(-values, kind="stable")
    return EigenDecomposition(values[order], _normalize_signs(vectors[:, order]))


def eigvals_desc(m):
    """Eigenvalues only, non-increasing, for one matrix or a stack of them."""
    return np.linalg.eigvalsh(symmetrize(m))[..., ::-1]


def _lower_regularized_gamma_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    else:
        raise ConvergenceFailure("incomplete gamma series did not converge")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_regularized_gamma_cf(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:
        raise ConvergenceFailure("incomplete gamma continued fraction did not converge")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi2_sf(x, df):
    """Upper tail probability ``P(chi2(df) >= x)``.

    Evaluated as the regularized upper incomplete gamma function
    ``Q(df/2, x/2)``: by its power series when ``x/2 < df/2 + 1`` and by
    its continued fraction otherwise.

    Raises
    ------
    InvalidDf
        If ``df`` is not a positive integer.
    """
    if isinstance(df, bool) or not float(df).is_integer() or df < 1:
        raise InvalidDf(f"degrees of freedom must be a positive integer, got {df!r}")
    x = float(x)
    if math.isnan(x):
        raise ValueError("x is NaN")
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    a = 0.5 * float(df)
    half = 0.5 * x
    if half == 0.0:
        return 1.0
    if half < a + 1.0:
        return max(0.0, 1.0 - _lower_regularized_gamma_series(a, half))
    return min(1.0, _upper_regularized_gamma_cf(a, half))


def haar_orthonormal(d, rng):
    """Orthogonal matrix drawn from the Haar measure on O(d).

    QR factorization of a standard Gaussian matrix, with the columns of Q
    re-signed by the signs of the diagonal of R.
    """
    d = int(d)
    if d < 1:
        raise ValueError("d must be positive")
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def haar_rotation(d, rng):
    """Rotation matrix drawn from the Haar measure on SO(d)."""
    q = haar_orthonormal(d, rng)
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


def cholesky_lower(m):
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefinite
        If ``m`` is not (numerically) positive definite.
    """
    a = symmetrize(m)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc


def block_diag(*blocks):
    """Block-diagonal matrix from square or rectangular 2-D blocks."""
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out

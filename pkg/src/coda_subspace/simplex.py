"""Aitchison geometry of the simplex.

Every function accepts either a single composition (1-D array) or a stack of
compositions (2-D array, one composition per row) and works along the last
axis. Compositions are closed to 1.

The only isometric logratio basis offered is the pivot basis: the i-th
coordinate contrasts part ``i`` against the geometric mean of all the parts
after it.
"""

import numpy as np

from .errors import DimensionMismatch, DimensionTooSmall, NonPositiveEntry

#: parts at or below this value are rejected to keep logarithms finite
PART_FLOOR = 1e-300


def _as_parts(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise ValueError(f"{name} must be a vector or a matrix of row compositions")
    if x.shape[-1] < 2:
        raise DimensionTooSmall(f"{name} has {x.shape[-1]} parts; at least 2 are required")
    if not np.all(np.isfinite(x)):
        raise NonPositiveEntry(f"{name} contains non-finite entries")
    if np.any(x <= PART_FLOOR):
        raise NonPositiveEntry(f"{name} contains parts that are zero, negative or below {PART_FLOOR}")
    return x


def _same_shape(x, y):
    if x.shape[-1] != y.shape[-1]:
        raise DimensionMismatch(f"compositions have {x.shape[-1]} and {y.shape[-1]} parts")


def _close_logs(logs):
    # exp of shifted logs, then closure; stays finite for any real input
    logs = logs - logs.max(axis=-1, keepdims=True)
    w = np.exp(logs)
    return w / w.sum(axis=-1, keepdims=True)


def closure(w):
    """Scale positive vectors so that their parts sum to one.

    Parameters
    ----------
    w : array_like of shape (D,) or (n, D)
        Strictly positive parts, ``D >= 2``.

    Returns
    -------
    ndarray
        ``w`` divided by its (row) sum.

    Raises
    ------
    NonPositiveEntry
        If any part is not strictly positive.
    DimensionTooSmall
        If ``D < 2``.

    Examples
    --------
    >>> closure([2, 3, 5])
    array([0.2, 0.3, 0.5])
    """
    w = _as_parts(w, "w")
    return w / w.sum(axis=-1, keepdims=True)


def perturb(x, y):
    """Perturbation ``x (+) y``: closure of the part-wise product."""
    x = _as_parts(x)
    y = _as_parts(y, "y")
    _same_shape(x, y)
    return _close_logs(np.log(x) + np.log(y))


def power(alpha, x):
    """Powering ``alpha (.) x``: closure of the part-wise ``alpha``-th power."""
    x = _as_parts(x)
    return _close_logs(float(alpha) * np.log(x))


def aitchison_inner(x, y):
    """Aitchison inner product, evaluated through the double sum of logratios.

    ``<x, y> = 1/(2D) sum_i sum_j ln(x_i/x_j) ln(y_i/y_j)``
    """
    x = _as_parts(x)
    y = _as_parts(y, "y")
    _same_shape(x, y)
    lx = np.log(x)
    ly = np.log(y)
    rx = lx[..., :, None] - lx[..., None, :]
    ry = ly[..., :, None] - ly[..., None, :]
    d = x.shape[-1]
    return (rx * ry).sum(axis=(-2, -1)) / (2 * d)


def clr(x):
    """Centred logratio: log of each part over the geometric mean of the parts."""
    lx = np.log(_as_parts(x))
    return lx - lx.mean(axis=-1, keepdims=True)


def contrast_matrix(d):
    """The ``D x (D-1)`` matrix linking clr and pivot coordinates.

    ``ilr(x) = V.T @ clr(x)`` and ``ilr_inv(v) = closure(exp(V @ v))``.
    Columns are orthonormal and ``V @ V.T = I - 1/D``.
    """
    d = int(d)
    if d < 2:
        raise DimensionTooSmall(f"D = {d}; at least 2 parts are required")
    v = np.zeros((d, d - 1))
    for j in range(1, d):
        norm = np.sqrt((d - j + 1) * (d - j))
        v[j - 1, j - 1] = (d - j) / norm
        v[j:, j - 1] = -1.0 / norm
    return v


def ilr(x):
    """Pivot logratio coordinates.

    Coordinate ``i`` (1-based) is
    ``sqrt((D-i)/(D-i+1)) * ln(x_i / gmean(x_{i+1}, ..., x_D))``.

    Parameters
    ----------
    x : array_like of shape (D,) or (n, D)

    Returns
    -------
    ndarray of shape (D-1,) or (n, D-1)
    """
    lx = np.log(_as_parts(x))
    d = lx.shape[-1]
    # mean of the logs of parts i+1..D, for i = 1..D-1
    tail_sums = np.cumsum(lx[..., ::-1], axis=-1)[..., ::-1]
    counts = np.arange(d - 1, 0, -1, dtype=float)
    tail_means = tail_sums[..., 1:] / counts
    coef = np.sqrt(counts / (counts + 1.0))
    return coef * (lx[..., :-1] - tail_means)


def ilr_inv(v):
    """Composition with the given pivot coordinates.

    Builds the clr vector ``psi`` part by part and returns
    ``closure(exp(psi))``.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim not in (1, 2):
        raise ValueError("v must be a vector or a matrix of row coordinates")
    if v.shape[-1] < 1:
        raise DimensionTooSmall("at least one coordinate is required")
    if not np.all(np.isfinite(v)):
        raise ValueError("ilr coordinates must be finite")
    d = v.shape[-1] + 1
    i = np.arange(1, d, dtype=float)
    # contribution of coordinate i to every later part
    spill = v / np.sqrt((d - i + 1) * (d - i))
    before = np.cumsum(spill, axis=-1) - spill
    psi = np.empty(v.shape[:-1] + (d,))
    psi[..., :-1] = -before + v * np.sqrt((d - i) / (d - i + 1))
    psi[..., -1] = -spill.sum(axis=-1)
    return _close_logs(psi)

"""Test for a common principal-component subspace between two ilr datasets.

The block with structural zeros lives in ``R^(D-Q-1)`` and the complete
block in ``R^(D-1)``. The smaller block is compared with the larger one by
padding its covariance (and its eigenvectors) with zeros for the ``Q``
missing coordinates.

Statistic, for subspace size ``k``::

    T = sum_{i<=k} (n_y - 1) alpha_i + (n_z - 1) beta_i - gamma_i

with ``alpha``, ``beta`` and ``gamma`` the descending eigenvalues of the
two sample covariances and of their degrees-of-freedom weighted sum. By the
Ky Fan inequality ``T >= 0``, with equality when the leading subspaces agree
perfectly.

Two null approximations are provided: a scaled chi-square law matching the
approximate first two null moments of ``T`` (valid for Gaussian ilr data),
and a nonparametric bootstrap that builds a null-satisfying copy of the
complete block by rotating it onto the eigenbasis of the other block.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .dataset import IlrDatasets, ilr_transform_split
from .errors import (
    ApproximationInvalid,
    BadK,
    ConfigError,
    DegenerateEigengap,
    DimensionMismatch,
    TooFewRows,
)
from .kernels import (
    block_diag,
    chi2_sf,
    eigvals_desc,
    haar_rotation,
    sample_covariance,
    sym_eig_desc,
)

log = logging.getLogger(__name__)

METHODS = ("schott", "bootstrap", "both")
DF_ROUNDING = ("nearest", "floor")
BOOT_BLOCK = 100  # replicates sharing one derived generator


@dataclass
class SubspaceTestConfig:
    k: int
    method: str = "both"
    n_boot: int = 1000
    seed: Optional[int] = None
    eigengap_tol: float = 1e-8
    df_rounding: str = "nearest"
    rerandomize_rotation: bool = False

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise BadK(f"k must be a positive integer, got {self.k!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.n_boot) != self.n_boot or self.n_boot < 1:
            raise ConfigError("n_boot must be a positive integer")
        if not self.eigengap_tol > 0:
            raise ConfigError("eigengap_tol must be positive")
        if self.df_rounding not in DF_ROUNDING:
            raise ConfigError(f"df_rounding must be one of {DF_ROUNDING}")


@dataclass(frozen=True)
class SchottNullParams:
    """Scaled chi-square approximation ``T ~ scale * chi2(df)``."""

    mu_t: float
    sigma2_t: float
    df: int
    scale: float

    @classmethod
    def from_moments(cls, mu_t, sigma2_t, df_rounding="nearest"):
        if not (mu_t > 0 and sigma2_t > 0) or not math.isfinite(mu_t * sigma2_t):
            raise ApproximationInvalid(
                f"approximate null moments are not usable: mean {mu_t!r}, variance {sigma2_t!r}")
        raw = 2.0 * mu_t * mu_t / sigma2_t
        df = math.floor(raw) if df_rounding == "floor" else math.floor(raw + 0.5)
        return cls(float(mu_t), float(sigma2_t), max(1, int(df)), sigma2_t / (2.0 * mu_t))


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str
    k: int
    null_params: Optional[SchottNullParams] = None
    n_boot_used: Optional[int] = None
    warnings: list = field(default_factory=list)

    __test__ = False  # not a pytest class

    def to_dict(self):
        return asdict(self)


def _check_k(k, p_y):
    if int(k) != k or not 1 <= k <= p_y:
        raise BadK(f"k = {k} outside 1..{p_y} (D - Q - 1)")
    return int(k)


def _check_ilr(ilr: IlrDatasets):
    if ilr.n_y < 2 or ilr.n_z < 2:
        raise TooFewRows(f"need at least 2 rows per block, got n_y={ilr.n_y}, n_z={ilr.n_z}")


def embed(omega_y, p):
    """Pad a (stack of) square matrices with zeros to size ``p x p``."""
    omega_y = np.asarray(omega_y, dtype=float)
    p_y = omega_y.shape[-1]
    if p_y > p:
        raise DimensionMismatch(f"cannot embed a {p_y}x{p_y} matrix into {p}x{p}")
    out = np.zeros(omega_y.shape[:-2] + (p, p))
    out[..., :p_y, :p_y] = omega_y
    return out


def pooled_matrix(omega_y, omega_z, n_y, n_z):
    """``(n_y - 1) * embed(omega_y) + (n_z - 1) * omega_z``."""
    omega_z = np.asarray(omega_z, dtype=float)
    if omega_z.shape[-1] != omega_z.shape[-2]:
        raise DimensionMismatch("omega_z must be square")
    if n_y < 2 or n_z < 2:
        raise TooFewRows("n_y and n_z must be at least 2")
    return (n_y - 1) * embed(omega_y, omega_z.shape[-1]) + (n_z - 1) * omega_z


def statistic_from_covariances(cov_y, cov_z, n_y, n_z, k):
    """Statistic from the two sample covariances; accepts stacks of them."""
    alpha = eigvals_desc(cov_y)[..., :k]
    beta = eigvals_desc(cov_z)[..., :k]
    gamma = eigvals_desc(pooled_matrix(cov_y, cov_z, n_y, n_z))[..., :k]
    return ((n_y - 1) * alpha + (n_z - 1) * beta - gamma).sum(axis=-1)


def test_statistic(ilr: IlrDatasets, k):
    """Sample value of the common-subspace statistic for subspace size ``k``."""
    k = _check_k(k, ilr.p_y)
    _check_ilr(ilr)
    cov_y = sample_covariance(ilr.y_tilde)
    cov_z = sample_covariance(ilr.z_tilde)
    return float(statistic_from_covariances(cov_y, cov_z, ilr.n_y, ilr.n_z, k))


test_statistic.__test__ = False


def null_moments(alpha, beta, psi, u1, u2, v1, v2, n_y, n_z):
    """Approximate null mean and variance of the statistic.

    Parameters
    ----------
    alpha, beta, psi : ndarray of shape (P,)
        Eigenvalues of the structural-zero covariance (zero padded to length
        ``P``), of the complete covariance and of the pooled covariance
        (normalized by ``n_y + n_z - 2``), all descending.
    u1, v1 : ndarray of shape (k, k)
    u2, v2 : ndarray of shape (P - k, P - k)
        Leading and trailing diagonal blocks of the two blocks' eigenvectors
        expressed in the pooled eigenbasis: entry ``[i, h]`` pairs pooled
        direction ``i`` with group eigenvector ``h``.
    n_y, n_z : int

    Returns
    -------
    (float, float)
        ``(mu_t, sigma2_t)``.
    """
    k = u1.shape[0]
    a, b = n_y - 1, n_z - 1
    n = n_y + n_z - 2
    a_top, a_bot = alpha[:k], alpha[k:]
    b_top, b_bot = beta[:k], beta[k:]

    # all arrays below are indexed [i, j] with i <= k < j
    da = a_top[:, None] - a_bot[None, :]
    db = b_top[:, None] - b_bot[None, :]
    dpsi = psi[:k, None] - psi[None, k:]
    ratio_a = np.outer(a_top, a_bot) / da
    ratio_b = np.outer(b_top, b_bot) / db

    # sum_h sum_l u_ih^2 u_jl^2 alpha_h alpha_l factorizes into two sums
    cross_a = np.outer((u1 ** 2) @ a_top, (u2 ** 2) @ a_bot)
    cross_b = np.outer((v1 ** 2) @ b_top, (v2 ** 2) @ b_bot)
    mu = np.sum(ratio_a + ratio_b - (a * cross_a + b * cross_b) / (n * dpsi))

    # sum_h sum_l (alpha_h alpha_l u_ih u_jl)^2 / (alpha_h - alpha_l)
    g_a = np.outer(a_top ** 2, a_bot ** 2) / da
    g_b = np.outer(b_top ** 2, b_bot ** 2) / db
    mixed = a * (u1 ** 2) @ g_a @ (u2 ** 2).T + b * (v1 ** 2) @ g_b @ (v2 ** 2).T

    # W[i, j, h, l] = cov of the pooled off-diagonal perturbations (i, j) and (h, l)
    ma1 = (u1 * a_top) @ u1.T
    ma2 = (u2 * a_bot) @ u2.T
    mb1 = (v1 * b_top) @ v1.T
    mb2 = (v2 * b_bot) @ v2.T
    w = a * np.einsum("ih,jl->ijhl", ma1, ma2) + b * np.einsum("ih,jl->ijhl", mb1, mb2)
    w_term = np.einsum("ijhl,hl->ij", w ** 2, 1.0 / dpsi) / (n * n * dpsi)

    sigma2 = 2.0 * np.sum(ratio_a ** 2 + ratio_b ** 2 - 2.0 * mixed / (n * dpsi) + w_term)
    return float(mu), float(sigma2)


def _check_gaps(name, values, k, tol):
    scale = max(float(np.max(np.abs(values))), 1e-300)
    gap = float(np.min(np.abs(values[:k, None] - values[None, k:])))
    if gap <= tol * scale:
        raise DegenerateEigengap(
            f"{name} eigenvalues {k} and {k + 1} are not separated (gap {gap:.3g})")


def schott_null_params_from_covariances(omega_y, omega_z, n_y, n_z, k, eigengap_tol=1e-8,
                                        df_rounding="nearest", rotations="projected"):
    """Scaled chi-square null approximation from two covariance matrices.

    With sample covariances this is the estimated approximation; with the
    true covariances of a simulation it is the theoretical one.

    Parameters
    ----------
    omega_y, omega_z : ndarray
        Covariances of the structural-zero block (``P_y x P_y``) and of the
        complete block (``P x P``).
    n_y, n_z : int
        Sample sizes entering the degrees-of-freedom weights.
    k : int
        Subspace size.
    eigengap_tol : float
        Relative tolerance below which an eigenvalue gap counts as zero.
    df_rounding : {"nearest", "floor"}
        How ``2 mu^2 / sigma^2`` is turned into an integer.
    rotations : {"projected", "direct"}
        How the group eigenvectors are expressed in the pooled eigenbasis
        ``K = [K1, K2]``. ``"projected"`` diagonalizes the four blocks
        ``K1' M K1`` and ``K2' M K2`` of each weighted covariance ``M``, which
        is what the estimated procedure does. ``"direct"`` takes the diagonal
        blocks of ``K' [U 0; 0 I]`` and ``K' V`` themselves. Both agree when
        the leading subspaces are common; they differ under the alternative.

    Raises
    ------
    DegenerateEigengap
        If an eigenvalue difference used as a denominator is within
        ``eigengap_tol`` (relative to the largest eigenvalue) of zero.
    ApproximationInvalid
        If the approximate mean or variance is not positive.
    """
    omega_y = np.asarray(omega_y, dtype=float)
    omega_z = np.asarray(omega_z, dtype=float)
    p_y, p = omega_y.shape[0], omega_z.shape[0]
    k = _check_k(k, p_y)
    if k >= p:
        raise ApproximationInvalid("k = D - 1 leaves no trailing directions; the statistic is identically 0")
    if rotations not in ("projected", "direct"):
        raise ConfigError(f"unknown rotations mode {rotations!r}")
    n = n_y + n_z - 2

    ey = sym_eig_desc(omega_y)
    ez = sym_eig_desc(omega_z)
    ep = sym_eig_desc(pooled_matrix(omega_y, omega_z, n_y, n_z))
    if rotations == "projected":
        k1, k2 = ep.vectors[:, :k], ep.vectors[:, k:]
        emb_y = (n_y - 1) * embed(omega_y, p)
        wz = (n_z - 1) * omega_z
        u1 = sym_eig_desc(k1.T @ emb_y @ k1).vectors
        u2 = sym_eig_desc(k2.T @ emb_y @ k2).vectors
        v1 = sym_eig_desc(k1.T @ wz @ k1).vectors
        v2 = sym_eig_desc(k2.T @ wz @ k2).vectors
    else:
        u_star = ep.vectors.T @ block_diag(ey.vectors, np.eye(p - p_y))
        v_star = ep.vectors.T @ ez.vectors
        u1, u2 = u_star[:k, :k], u_star[k:, k:]
        v1, v2 = v_star[:k, :k], v_star[k:, k:]

    alpha = np.zeros(p)
    alpha[:p_y] = ey.values
    beta = ez.values
    psi = ep.values / n

    _check_gaps("structural-zero block", alpha, k, eigengap_tol)
    _check_gaps("complete block", beta, k, eigengap_tol)
    _check_gaps("pooled", psi, k, eigengap_tol)

    mu, sigma2 = null_moments(alpha, beta, psi, u1, u2, v1, v2, n_y, n_z)
    return SchottNullParams.from_moments(mu, sigma2, df_rounding)


def schott_null_params(ilr: IlrDatasets, k, eigengap_tol=1e-8, df_rounding="nearest"):
    """Estimated null approximation from the sample covariances of ``ilr``."""
    _check_ilr(ilr)
    return schott_null_params_from_covariances(
        sample_covariance(ilr.y_tilde), sample_covariance(ilr.z_tilde),
        ilr.n_y, ilr.n_z, k, eigengap_tol=eigengap_tol, df_rounding=df_rounding)


def schott_p_value(t, params: SchottNullParams):
    """Upper tail of ``scale * chi2(df)`` at ``t``."""
    return chi2_sf(max(float(t), 0.0) / params.scale, params.df)


def build_rotated_z(ilr: IlrDatasets, k, rng, r1=None, r2=None):
    """Rotate the complete block so that it satisfies the null hypothesis.

    The eigenvectors of the structural-zero block are padded to ``P x P``,
    then spun by a random rotation inside the leading ``k``-subspace and
    another inside its complement. The complete block is rotated so that its
    own eigenvectors land on that basis.

    Returns
    -------
    (ndarray, ndarray)
        The rotated complete block (``n_z x P``) and the rotation ``R3``.
    """
    k = _check_k(k, ilr.p_y)
    _check_ilr(ilr)
    p = ilr.p
    u = sym_eig_desc(sample_covariance(ilr.y_tilde)).vectors
    v = sym_eig_desc(sample_covariance(ilr.z_tilde)).vectors
    if r1 is None:
        r1 = haar_rotation(k, rng)
    if r2 is None:
        r2 = haar_rotation(p - k, rng) if p > k else np.zeros((0, 0))
    u_boot = block_diag(u, np.eye(ilr.q)) @ block_diag(r1, r2)
    r3 = u_boot @ v.T
    return ilr.z_tilde @ r3.T, r3


def _boot_block(y, z_boot, n_y, n_z, k, n_rep, seed_seq):
    rng = np.random.default_rng(seed_seq)
    iy = rng.integers(0, n_y, size=(n_rep, n_y))
    iz = rng.integers(0, n_z, size=(n_rep, n_z))
    return statistic_from_covariances(
        sample_covariance(y[iy]), sample_covariance(z_boot[iz]), n_y, n_z, k)


def bootstrap_p_value(ilr: IlrDatasets, k, n_boot, rng, rerandomize_rotation=False):
    """Bootstrap p-value of the common-subspace test.

    The null-satisfying complete block is built once (unless
    ``rerandomize_rotation``), then each replicate resamples ``n_y`` rows of
    the structural-zero block and ``n_z`` rows of the rotated complete block
    with replacement. Replicates are drawn in fixed blocks whose generators
    derive from one seed taken from ``rng`` and the block index, so the
    result does not depend on how blocks are scheduled.

    Returns
    -------
    (float, float)
        ``(p_value, t)`` with ``p_value = #{t_b >= t} / n_boot``.
    """
    k = _check_k(k, ilr.p_y)
    _check_ilr(ilr)
    if int(n_boot) != n_boot or n_boot < 1:
        raise ConfigError("n_boot must be a positive integer")
    t = test_statistic(ilr, k)
    z_boot, _ = build_rotated_z(ilr, k, rng)
    root = np.random.SeedSequence(int(rng.integers(0, 2 ** 63)))
    n_blocks = -(-n_boot // BOOT_BLOCK)
    exceed = 0
    for b, child in enumerate(root.spawn(n_blocks)):
        n_rep = min(BOOT_BLOCK, n_boot - b * BOOT_BLOCK)
        if rerandomize_rotation:
            rot_rng = np.random.default_rng(child.spawn(1)[0])
            stats = np.empty(n_rep)
            for r in range(n_rep):
                zb, _ = build_rotated_z(ilr, k, rot_rng)
                stats[r] = _boot_block(ilr.y_tilde, zb, ilr.n_y, ilr.n_z, k, 1, rot_rng)[0]
        else:
            stats = _boot_block(ilr.y_tilde, z_boot, ilr.n_y, ilr.n_z, k, n_rep, child)
        exceed += int(np.count_nonzero(stats >= t))
    return exceed / n_boot, t


def eigengap_warnings(ilr: IlrDatasets, k, tol=1e-8):
    out = []
    for name, rows in (("structural-zero block", ilr.y_tilde), ("complete block", ilr.z_tilde)):
        vals = eigvals_desc(sample_covariance(rows))
        if k < vals.size and vals[k - 1] - vals[k] <= tol * max(abs(vals[0]), 1e-300):
            out.append(f"near-degenerate eigengap between eigenvalues {k} and {k + 1} of the {name}")
    return out


def run_test_ilr(ilr: IlrDatasets, cfg: SubspaceTestConfig, rng=None):
    """Run the configured test(s) on ilr coordinates.

    Returns a :class:`TestResult`, or a ``(schott, bootstrap)`` pair when
    ``cfg.method == "both"``.
    """
    k = _check_k(cfg.k, ilr.p_y)
    _check_ilr(ilr)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    t = test_statistic(ilr, k)
    gap_warn = eigengap_warnings(ilr, k, cfg.eigengap_tol)
    results = []
    if cfg.method in ("schott", "both"):
        params = schott_null_params(ilr, k, cfg.eigengap_tol, cfg.df_rounding)
        results.append(TestResult(t, schott_p_value(t, params), "schott", k,
                                  null_params=params, warnings=list(gap_warn)))
    if cfg.method in ("bootstrap", "both"):
        p, _ = bootstrap_p_value(ilr, k, cfg.n_boot, rng, cfg.rerandomize_rotation)
        warnings = list(gap_warn)
        if p == 0:
            warnings.append(f"bootstrap p-value is 0 (p < 1/{cfg.n_boot})")
        results.append(TestResult(t, p, "bootstrap", k, n_boot_used=cfg.n_boot, warnings=warnings))
    for res in results:
        for w in res.warnings:
            log.warning(w)
    return results[0] if len(results) == 1 else tuple(results)


def run_test(ds, cfg: SubspaceTestConfig, rng=None):
    """Full pipeline on a :class:`~coda_subspace.dataset.CompositionalDataset`."""
    results = run_test_ilr(ilr_transform_split(ds), cfg, rng)
    if ds.warnings:
        for res in (results if isinstance(results, tuple) else (results,)):
            res.warnings[:0] = list(ds.warnings)
    return results

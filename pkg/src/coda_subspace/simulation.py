"""Monte Carlo study of the common-subspace test.

Three scenarios drive the covariance pair:

* ``S1``: the leading 2-subspaces coincide (null hypothesis true);
* ``S2``: only the first principal direction is shared;
* ``S3``: the two eigenbases are independent.

ilr data are then drawn from Gaussian, Student t or rotated uniform laws, all
standardized so that their population covariance is exactly the scenario
covariance.

Every replicate owns a generator derived from ``(seed, n_y, n_z, index)``,
so results are identical whatever the number of worker processes.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import IlrDatasets
from .errors import ApproximationInvalid, ConfigError, DegenerateEigengap
from .kernels import (
    block_diag,
    chi2_sf,
    cholesky_lower,
    haar_orthonormal,
    haar_rotation,
    sample_covariance,
)
from .subspace import (
    bootstrap_p_value,
    schott_null_params_from_covariances,
    schott_p_value,
    statistic_from_covariances,
)

PAPER_ALPHA = (10.0, 9.0, 1.0, 1.0, 0.5)
PAPER_BETA = (6.0, 5.0, 1.0, 0.9, 0.3, 0.1, 0.02)
SCENARIOS = ("S1", "S2", "S3")
FAMILIES = ("gaussian", "student", "uniform")
SIM_METHODS = ("schott_theo", "schott_est", "bootstrap")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "S1"
    d: int = 8
    q: int = 2
    alpha: tuple = PAPER_ALPHA
    beta: tuple = PAPER_BETA
    k: int = 2

    def __post_init__(self):
        object.__setattr__(self, "scenario", self.scenario.upper())
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if len(self.alpha) != self.d - self.q - 1 or len(self.beta) != self.d - 1:
            raise ConfigError("alpha needs D-Q-1 values and beta D-1 values")
        for name, vals in (("alpha", self.alpha), ("beta", self.beta)):
            if min(vals) <= 0 or any(x < y for x, y in zip(vals, vals[1:])):
                raise ConfigError(f"{name} must be positive and non-increasing")
        if not 1 <= self.k <= self.d - self.q - 1:
            raise ConfigError("k must lie in 1..D-Q-1")
        # the null moments divide by alpha_k - alpha_{k+1} and beta_k - beta_{k+1}
        for vals in (self.alpha, self.beta):
            if self.k < len(vals) and vals[self.k - 1] <= vals[self.k]:
                raise ConfigError("eigenvalues k and k+1 must be distinct")

    @property
    def p_y(self):
        return self.d - self.q - 1

    @property
    def p(self):
        return self.d - 1


@dataclass(frozen=True)
class DistributionSpec:
    family: str = "gaussian"
    dof: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.family == "student" and (self.dof is None or self.dof <= 2):
            raise ConfigError("student family needs dof > 2")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    dist: DistributionSpec = field(default_factory=DistributionSpec)
    sizes: tuple = ((100, 100),)
    n_sim: int = 1000
    level: float = 0.05
    methods: tuple = SIM_METHODS
    n_boot: int = 1000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple((int(a), int(b)) for a, b in self.sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_sim < 1:
            raise ConfigError("n_sim must be at least 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie strictly between 0 and 1")
        if not self.sizes or any(a < 2 or b < 2 for a, b in self.sizes):
            raise ConfigError("every (n_y, n_z) needs both sizes >= 2")
        unknown = set(self.methods) - set(SIM_METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {SIM_METHODS}")
        if self.n_boot < 1 or self.jobs < 1:
            raise ConfigError("n_boot and jobs must be positive")

    @property
    def k(self):
        return self.scenario.k


@dataclass(frozen=True)
class RejectionRow:
    scenario: str
    dist: str
    dof: Optional[int]
    n_y: int
    n_z: int
    method: str
    rejection_rate: float
    n_sim: int
    n_failed: int


ROW_FIELDS = ("scenario", "dist", "dof", "n_y", "n_z", "method", "rejection_rate", "n_sim", "n_failed")


def scenario_covariances(spec: ScenarioSpec, rng):
    """Population covariances ``(omega_y, omega_z)`` for one scenario draw."""
    u = haar_orthonormal(spec.p_y, rng)
    u_emb = block_diag(u, np.eye(spec.q))
    if spec.scenario == "S1":
        v = u_emb @ block_diag(haar_rotation(spec.k, rng), haar_rotation(spec.p - spec.k, rng))
    elif spec.scenario == "S2":
        v = u_emb @ block_diag(np.eye(1), haar_rotation(spec.p - 1, rng))
    else:
        v = haar_orthonormal(spec.p, rng)
    omega_y = (u * np.array(spec.alpha)) @ u.T
    omega_z = (v * np.array(spec.beta)) @ v.T
    return 0.5 * (omega_y + omega_y.T), 0.5 * (omega_z + omega_z.T)


def sample_ilr(dist: DistributionSpec, omega, n, rng):
    """``n`` zero-mean rows with population covariance ``omega``."""
    chol = cholesky_lower(omega)
    p = chol.shape[0]
    if dist.family == "gaussian":
        return rng.standard_normal((n, p)) @ chol.T
    if dist.family == "student":
        nu = float(dist.dof)
        g = rng.standard_normal((n, p)) @ (math.sqrt((nu - 2.0) / nu) * chol).T
        w = rng.chisquare(nu, size=n)
        return g / np.sqrt(w / nu)[:, None]
    s3 = math.sqrt(3.0)
    return rng.uniform(-s3, s3, size=(n, p)) @ chol.T


def replicate_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key)))


def _simulate_one(cfg: ExperimentConfig, n_y, n_z, index):
    """p-values (None when the method failed) for one replicate of one cell."""
    rng = replicate_rng(cfg.seed, n_y, n_z, index)
    omega_y, omega_z = scenario_covariances(cfg.scenario, rng)
    y = sample_ilr(cfg.dist, omega_y, n_y, rng)
    z = sample_ilr(cfg.dist, omega_z, n_z, rng)
    cov_y, cov_z = sample_covariance(y), sample_covariance(z)
    k = cfg.k
    t = float(statistic_from_covariances(cov_y, cov_z, n_y, n_z, k))
    out = {}
    for method in cfg.methods:
        try:
            if method == "schott_theo":
                params = schott_null_params_from_covariances(
                    omega_y, omega_z, n_y, n_z, k, rotations="direct")
                out[method] = schott_p_value(t, params)
            elif method == "schott_est":
                params = schott_null_params_from_covariances(cov_y, cov_z, n_y, n_z, k)
                out[method] = schott_p_value(t, params)
            else:
                p, _ = bootstrap_p_value(IlrDatasets(y, z), k, cfg.n_boot, rng)
                out[method] = p
        except (DegenerateEigengap, ApproximationInvalid):
            out[method] = None
    return out


def _simulate_chunk(args):
    cfg, n_y, n_z, start, stop = args
    return [_simulate_one(cfg, n_y, n_z, i) for i in range(start, stop)]


def _map_replicates(cfg, n_y, n_z, n):
    if cfg.jobs == 1:
        return _simulate_chunk((cfg, n_y, n_z, 0, n))
    step = max(1, -(-n // (4 * cfg.jobs)))
    chunks = [(cfg, n_y, n_z, s, min(s + step, n)) for s in range(0, n, step)]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        parts = list(pool.map(_simulate_chunk, chunks))
    return [r for part in parts for r in part]


def simulate_p_values(cfg: ExperimentConfig, n_y, n_z):
    """Per-replicate p-value dictionaries for one ``(n_y, n_z)`` cell."""
    return _map_replicates(cfg, n_y, n_z, cfg.n_sim)


def run_rejection_experiment(cfg: ExperimentConfig):
    """Rejection rates at ``cfg.level`` for every size pair and method.

    Replicates where a method fails (degenerate eigengap or unusable null
    moments) are counted in ``n_failed`` and left out of that method's rate.
    """
    rows = []
    for n_y, n_z in cfg.sizes:
        reps = simulate_p_values(cfg, n_y, n_z)
        for method in cfg.methods:
            ps = [r[method] for r in reps if r[method] is not None]
            failed = cfg.n_sim - len(ps)
            rate = sum(p <= cfg.level for p in ps) / len(ps) if ps else float("nan")
            rows.append(RejectionRow(cfg.scenario.scenario, cfg.dist.family, cfg.dist.dof,
                                     n_y, n_z, method, rate, cfg.n_sim, failed))
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for row in rows:
        writer.writerow([
            row.scenario, row.dist, "" if row.dof is None else row.dof, row.n_y, row.n_z,
            row.method, f"{row.rejection_rate:.6f}", row.n_sim, row.n_failed,
        ])
    return buf.getvalue()


@dataclass
class CdfResult:
    values: np.ndarray
    cdf: np.ndarray
    params: object
    n_y: int
    n_z: int

    def fitted_cdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([1.0 - chi2_sf(max(v, 0.0) / self.params.scale, self.params.df) for v in x])

    def ks_distance(self):
        """Kolmogorov-Smirnov distance between the empirical and fitted cdf."""
        f = self.fitted_cdf(self.values)
        n = self.values.size
        upper = np.arange(1, n + 1) / n
        lower = np.arange(0, n) / n
        return float(max(np.max(np.abs(upper - f)), np.max(np.abs(f - lower))))

    def fitted_at_empirical_quantile(self, prob=0.95):
        """Fitted cdf evaluated at the empirical ``prob``-quantile.

        Above ``prob``: the empirical law sits right of the fitted one in the
        upper tail (a test using the fit rejects too often). Below: left.
        """
        idx = max(0, math.ceil(prob * self.values.size) - 1)
        return float(self.fitted_cdf(self.values[idx])[0])


def _null_stat_chunk(args):
    cfg, omega_y, omega_z, n_y, n_z, start, stop = args
    out = []
    for i in range(start, stop):
        rng = replicate_rng(cfg.seed, 1, n_y, n_z, i)
        y = sample_ilr(cfg.dist, omega_y, n_y, rng)
        z = sample_ilr(cfg.dist, omega_z, n_z, rng)
        out.append(float(statistic_from_covariances(
            sample_covariance(y), sample_covariance(z), n_y, n_z, cfg.k)))
    return out


def null_statistic_cdf(cfg: ExperimentConfig):
    """Empirical null cdf of the statistic next to its scaled chi-square fit.

    One covariance pair is drawn from scenario S1; ``cfg.n_sim`` datasets of
    size ``cfg.sizes[0]`` are then simulated from it. The fit uses the null
    approximation evaluated at the true covariances.
    """
    if cfg.scenario.scenario != "S1":
        raise ConfigError("the null cdf is only defined for scenario S1")
    n_y, n_z = cfg.sizes[0]
    omega_y, omega_z = scenario_covariances(cfg.scenario, replicate_rng(cfg.seed, 0))
    params = schott_null_params_from_covariances(omega_y, omega_z, n_y, n_z, cfg.k, rotations="direct")
    n = cfg.n_sim
    if cfg.jobs == 1:
        stats = _null_stat_chunk((cfg, omega_y, omega_z, n_y, n_z, 0, n))
    else:
        step = max(1, -(-n // (4 * cfg.jobs)))
        chunks = [(cfg, omega_y, omega_z, n_y, n_z, s, min(s + step, n)) for s in range(0, n, step)]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            stats = [t for part in pool.map(_null_stat_chunk, chunks) for t in part]
    values = np.sort(np.array(stats))
    return CdfResult(values, np.arange(1, n + 1) / n, params, n_y, n_z)

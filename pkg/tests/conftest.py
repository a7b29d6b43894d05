import io

import pytest

from coda_subspace import cli
from coda_subspace.dataset import from_ilr, write_csv
from coda_subspace.simulation import (
    DistributionSpec,
    ScenarioSpec,
    replicate_rng,
    sample_ilr,
    scenario_covariances,
)


def simulated_dataset(scenario="S1", n_y=100, n_z=100, seed=0, spec=None):
    """Compositional dataset drawn from one scenario covariance pair."""
    spec = spec or ScenarioSpec(scenario)
    rng = replicate_rng(seed, 31337)
    oy, oz = scenario_covariances(spec, rng)
    dist = DistributionSpec("gaussian")
    names = [f"part{i}" for i in range(1, spec.d + 1)]
    return from_ilr(sample_ilr(dist, oy, n_y, rng), sample_ilr(dist, oz, n_z, rng), part_names=names)


def write_fixture(path, **kwargs):
    write_csv(simulated_dataset(**kwargs), path)
    return path


class CliRun:
    def __init__(self, code, out, err):
        self.code, self.out, self.err = code, out, err


def run_cli(*argv, env=None):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main([str(a) for a in argv], env=env or {}, stdout=out, stderr=err)
    return CliRun(code, out.getvalue(), err.getvalue())


@pytest.fixture
def cli_run():
    return run_cli


# one line per acceptance criterion, repeated after the test report
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

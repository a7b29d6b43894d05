"""Test for a common principal-component subspace between two compositional
datasets, one of which carries structural zeros."""

import logging

from .dataset import (
    CompositionalDataset,
    IlrDatasets,
    ilr_transform_split,
    load_csv,
    write_csv,
)
from .subspace import (
    SchottNullParams,
    SubspaceTestConfig,
    TestResult,
    bootstrap_p_value,
    run_test,
    schott_null_params,
    schott_p_value,
    test_statistic,
)

__all__ = [
    "CompositionalDataset", "IlrDatasets", "ilr_transform_split", "load_csv", "write_csv",
    "SchottNullParams", "SubspaceTestConfig", "TestResult", "bootstrap_p_value", "run_test",
    "schott_null_params", "schott_p_value", "test_statistic",
]
__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

import numpy as np
import pytest

from loanscreen.data_model import FeatureSchema, Portfolio


def make_portfolio(n, prevalence=0.5, n_numeric=2, n_categorical=0, seed=0, kind="synthetic"):
    """Small labeled portfolio with reproducible contents."""
    rng = np.random.default_rng(seed)
    n_pos = max(int(round(prevalence * n)), 1)
    outcomes = np.zeros(n, dtype=np.int64)
    outcomes[rng.permutation(n)[:n_pos]] = 1
    schema = [FeatureSchema(f"num_{i}", "numeric") for i in range(n_numeric)]
    schema += [FeatureSchema(f"cat_{i}", "categorical") for i in range(n_categorical)]
    columns = {}
    for i in range(n_numeric):
        columns[f"num_{i}"] = rng.normal(outcomes * (i + 1) * 0.5, 1.0)
    for i in range(n_categorical):
        symbols = np.asarray(["alpha", "beta", "gamma"], dtype=object)
        columns[f"cat_{i}"] = symbols[rng.integers(0, 3, size=n)]
    ids = [f"r{j:05d}" for j in range(n)]
    return Portfolio(schema, ids, columns, outcomes, kind=kind)


@pytest.fixture
def small_portfolio():
    return make_portfolio(100, prevalence=0.5, seed=7)

import time

import pytest

from ioexai.dataset import builtin_scenario, synth_generate
from ioexai.pipeline import PipelineConfig, run_pipeline
from ioexai.regressors import FitConfig


@pytest.fixture(scope="session")
def table2_dataset():
    return synth_generate(builtin_scenario("table2"))


@pytest.fixture(scope="session")
def table2_run(table2_dataset):
    """The frozen reference experiment: Extra Trees, 100 estimators, every test row explained."""
    start = time.perf_counter()
    out = run_pipeline(table2_dataset, PipelineConfig(kind="extra_trees", fit=FitConfig(n_estimators=100)))
    return out, time.perf_counter() - start


@pytest.fixture(scope="session")
def table2_linear_run(table2_dataset):
    return run_pipeline(table2_dataset, PipelineConfig(kind="linear"))


@pytest.fixture(scope="session")
def small_dataset():
    return synth_generate(builtin_scenario("five_gnb"))


@pytest.fixture(scope="session")
def small_config():
    return PipelineConfig(kind="extra_trees", fit=FitConfig(n_estimators=10, seed=3), explain_rows=25)

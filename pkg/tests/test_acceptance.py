"""Define long-running end-to-end tests; run with --runslow."""
from dataclasses import replace

import pytest

from glimpse_iqa.config import load
from glimpse_iqa.data import load_dataset, prepare, split_by_reference
from glimpse_iqa.evaluation import fixation_informativeness, median_over_splits
from glimpse_iqa.train import Trainer, run_gradcheck, train_and_evaluate

from .common import fixture_path

DESK_CONFIG = "desk.ini"


@pytest.fixture(scope="module")
def desk_config():
    """Define the 320-image synthetic run."""
    return load(fixture_path(DESK_CONFIG))


def _split(config, seed):
    index = load_dataset(config.data, config.seed)
    train, val, test = split_by_reference(index, config.data.ratios, seed)
    return index, [prepare(part.samples, config.data) for part in (train, val, test)]


@pytest.mark.slow
def test_full_gradient_check():
    """Test every coordinate of the reduced model against central differences."""
    report = run_gradcheck()
    assert report.passed, report.lines()


@pytest.mark.slow
def test_synthetic_end_to_end(desk_config):
    """Test median accuracy ≥ 0.80 and SROCC ≥ 0.75 over five split seeds."""

    def run(seed):
        index, (train, val, test) = _split(desk_config, seed)
        return train_and_evaluate(desk_config, train, val, test, class_names=index.class_names)

    summary = median_over_splits(run, range(desk_config.n_splits))
    assert summary.accuracy >= 0.80
    assert summary.srocc is not None and summary.srocc >= 0.75


@pytest.mark.slow
def test_final_fixations_find_local_distortions(desk_config):
    """Test that final fixations land nearer corrupted blocks than random ones."""
    data = replace(desk_config.data, n_references=64, ratios=(0.5, 0.1, 0.4))
    config = replace(desk_config, data=data)
    _, (train, val, test) = _split(config, 0)
    result = Trainer(config).fit(train, val)
    assert sum(1 for s in test if s.blocks) >= 100
    outcome = fixation_informativeness(
        result.best_params, test, config.net, seed=config.seed, threads=config.threads
    )
    assert outcome.model_distance < outcome.random_distance
    assert outcome.significant

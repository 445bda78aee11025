"""Define tests for the loss, the optimizer and the training loop."""
from dataclasses import replace
import os

import numpy as np
import pytest

from glimpse_iqa import checkpoint, ndnum as nd
from glimpse_iqa.config import NetConfig, TrainConfig
from glimpse_iqa.errors import DatasetError, ShapeError
from glimpse_iqa.ndnum import GraphTape
from glimpse_iqa.net import LOCATION_HEAD, ModelParams, param_shapes
from glimpse_iqa.train import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    METRICS_COLUMNS,
    METRICS_FILE,
    AdamState,
    Trainer,
    adam_step,
    clip_gradients,
    lr_schedule,
    run_gradcheck,
    stability_reset,
    total_loss,
    train_epoch,
)

from .common import fake_trace


def _outputs(logits, score):
    tape = GraphTape()
    return tape, fake_trace(tape.leaf(logits, "logits"), tape.leaf([score], "score"))


def test_total_loss_of_perfect_prediction():
    """Test that a confident correct class and an exact score cost nothing."""
    _, trace = _outputs([60.0, 0.0, 0.0], 7.0)
    assert total_loss(trace, 0, 7.0, TrainConfig()).item() == pytest.approx(0.0, abs=1e-12)


def test_total_loss_without_regression_is_classification():
    """Test that λ = 0 leaves only the classification loss."""
    _, trace = _outputs([0.0, 0.0], 3.0)
    config = TrainConfig(lambda_reg=0.0)
    assert total_loss(trace, 1, 8.0, config).item() == pytest.approx(np.log(2.0))


def test_total_loss_single_task_is_regression():
    """Test that turning multi-task off drops the classification loss."""
    tape, trace = _outputs([0.0, 0.0], 3.0)
    loss = total_loss(trace, 1, 5.0, TrainConfig(multi_task=False, lambda_reg=2.0))
    assert loss.item() == pytest.approx(4.0)
    grads = nd.backward(tape, loss)
    np.testing.assert_array_equal(grads["logits"], [0.0, 0.0])
    np.testing.assert_array_equal(grads["score"], [-2.0])


def test_adam_zero_gradient_leaves_params():
    """Test that all-zero gradients change nothing."""
    params = ModelParams(w=np.array([1.0, -2.0]))
    state = AdamState()
    for _ in range(3):
        params = adam_step(params, {"w": np.zeros(2)}, state, 0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert "w" not in state.m


def test_adam_zero_gradient_keeps_moments():
    """Test that a skipped step neither decays the moments nor moves the parameter."""
    state = AdamState()
    params = adam_step(ModelParams(w=np.array([0.5])), {"w": np.array([2.0])}, state, 0.1)
    m, v, after_first = state.m["w"].copy(), state.v["w"].copy(), params["w"].copy()
    params = adam_step(params, {"w": np.zeros(1)}, state, 0.1)
    np.testing.assert_array_equal(state.m["w"], m)
    np.testing.assert_array_equal(state.v["w"], v)
    assert state.counts["w"] == 1
    assert state.step == 2
    np.testing.assert_array_equal(params["w"], after_first)


def test_adam_matches_hand_recurrence():
    """Test three steps of g = 1 against the textbook recurrence."""
    params = ModelParams(w=np.array([0.0]))
    state = AdamState()
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    m = v = theta = 0.0
    for t in range(1, 4):
        params = adam_step(params, {"w": np.array([1.0])}, state, lr)
        m = b1 * m + (1 - b1)
        v = b2 * v + (1 - b2)
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert params["w"][0] == pytest.approx(theta, abs=1e-12)
    assert state.step == 3


def test_adam_first_step_is_about_lr():
    """Test that the first bias-corrected update has magnitude ≈ lr."""
    params = adam_step(ModelParams(w=np.array([0.0])), {"w": np.array([1.0])}, AdamState(), 1e-3)
    assert params["w"][0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_sign_symmetry():
    """Test that gradients g and −g move two parameters symmetrically."""
    params = ModelParams(a=np.array([0.5]), b=np.array([0.5]))
    state = AdamState()
    for g in (0.3, 1.2, -0.4):
        params = adam_step(params, {"a": np.array([g]), "b": np.array([-g])}, state, 1e-2)
    assert params["a"][0] - 0.5 == pytest.approx(-(params["b"][0] - 0.5), abs=1e-15)


def test_adam_shape_mismatch():
    """Test that a gradient of the wrong shape raises."""
    with pytest.raises(ShapeError):
        adam_step(ModelParams(w=np.zeros(2)), {"w": np.ones(3)}, AdamState(), 0.1)


def test_adam_returns_new_arrays():
    """Test that the input parameters are not modified in place."""
    params = ModelParams(w=np.array([1.0]))
    adam_step(params, {"w": np.array([1.0])}, AdamState(), 0.1)
    assert params["w"][0] == 1.0


def test_lr_schedule():
    """Test the linear decay from lr_start to lr_end."""
    config = TrainConfig()
    assert lr_schedule(0, config) == pytest.approx(0.001)
    assert lr_schedule(999, config) == pytest.approx(0.0001)
    assert lr_schedule(1, TrainConfig(epochs=3)) == pytest.approx(0.00055)


def test_lr_schedule_out_of_range():
    """Test that an epoch beyond the run raises."""
    with pytest.raises(ValueError):
        lr_schedule(1000, TrainConfig())


def test_stability_reset_not_triggered(smoke_config, reduced_params, rng):
    """Test that unsaturated μ values leave the location head alone."""
    before = reduced_params["loc.W_rl"].copy()
    assert not stability_reset(reduced_params, np.full((8, 2), 0.5), smoke_config, rng)
    np.testing.assert_array_equal(reduced_params["loc.W_rl"], before)


def test_stability_reset_triggered(smoke_config, reduced_params, rng):
    """Test that fully saturated μ values redraw the location head."""
    reduced_params["loc.W_rl"] = np.full(reduced_params["loc.W_rl"].shape, 3.0)
    assert stability_reset(reduced_params, np.ones((8, 2)), smoke_config, rng)
    assert np.abs(reduced_params["loc.W_rl"]).max() <= smoke_config.net.loc_init_scale


def test_stability_reset_boundary(smoke_config, reduced_params, rng):
    """Test that a saturated fraction of exactly 0.9 does not reset."""
    mu = np.array([1.0] * 9 + [0.0]).reshape(5, 2)
    assert not stability_reset(reduced_params, mu, smoke_config, rng)


def test_clip_gradients():
    """Test global-norm clipping."""
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_gradients(grads, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(grads["a"], [0.6])
    np.testing.assert_allclose(grads["b"], [0.8])


def test_train_epoch_rejects_empty_split(smoke_config, reduced_params):
    """Test that an empty dataset is an error, not a silent success."""
    with pytest.raises(DatasetError):
        train_epoch(reduced_params, [], AdamState(), smoke_config, 0)


def test_train_epoch_requires_prepared_samples(smoke_config, smoke_index):
    """Test that samples without in-memory images are refused."""
    samples = [replace(s, image=None) for s in smoke_index.samples]
    params = Trainer(smoke_config).params
    with pytest.raises(DatasetError):
        train_epoch(params, samples, AdamState(), smoke_config, 0)


def test_train_epoch_metrics(smoke_config, smoke_samples):
    """Test that one epoch reports sane metrics and finite parameters."""
    trainer = Trainer(smoke_config)
    params, metrics = train_epoch(trainer.params, smoke_samples, trainer.state, smoke_config, 0)
    assert metrics.epoch == 0
    assert metrics.lr == smoke_config.train.lr_start
    assert 0.0 <= metrics.mean_reward <= 1.0
    assert 0.0 <= metrics.train_acc <= 1.0
    assert np.isfinite(metrics.mean_loss)
    assert params.all_finite()
    assert trainer.state.step == 4


def test_train_epoch_is_deterministic(smoke_config, smoke_samples):
    """Test that a fixed seed reproduces parameters and metrics exactly."""
    runs = []
    for _ in range(2):
        trainer = Trainer(smoke_config)
        runs.append(train_epoch(trainer.params, smoke_samples, trainer.state, smoke_config, 0))
    assert runs[0][1] == runs[1][1]
    for name in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][name], runs[1][0][name])


def test_train_epoch_does_not_depend_on_threads(smoke_config, smoke_samples):
    """Test that running episodes on several threads gives the same result."""
    results = []
    for threads in (1, 3):
        config = replace(smoke_config, threads=threads)
        trainer = Trainer(config)
        results.append(train_epoch(trainer.params, smoke_samples, trainer.state, config, 0))
    for name in results[0][0]:
        np.testing.assert_array_equal(results[0][0][name], results[1][0][name])


def test_frozen_location_head(supervised_config, smoke_samples):
    """Test that freezing keeps the location head at its initial value."""
    trainer = Trainer(supervised_config)
    before = {name: trainer.params[name].copy() for name in LOCATION_HEAD}
    params, _ = train_epoch(trainer.params, smoke_samples, trainer.state, supervised_config, 0)
    for name in LOCATION_HEAD:
        np.testing.assert_array_equal(params[name], before[name])


def test_zero_reward_leaves_location_head(smoke_config, smoke_samples):
    """Test that an epoch in which no episode is rewarded never moves the location head."""
    config = replace(
        smoke_config,
        policy=replace(smoke_config.policy, score_threshold=1e-12),
        train=replace(smoke_config.train, multi_task=False, reset_fraction=1.0),
    )
    trainer = Trainer(config)
    before = {name: trainer.params[name].copy() for name in LOCATION_HEAD}
    params, metrics = train_epoch(trainer.params, smoke_samples, trainer.state, config, 0)
    assert metrics.mean_reward == 0.0
    for name in LOCATION_HEAD:
        np.testing.assert_array_equal(params[name], before[name])
        assert name not in trainer.state.m
    assert "score.b2" in trainer.state.m


def test_supervised_loss_decreases(supervised_config, smoke_index, smoke_samples):
    """Test that pure supervised training lowers the loss over 20 epochs."""
    config = replace(
        supervised_config,
        train=replace(supervised_config.train, epochs=20, lr_start=0.01, lr_end=0.01),
    )
    result = Trainer(config).fit(smoke_samples)
    assert result.history[-1].mean_loss < result.history[0].mean_loss


def test_trainer_writes_checkpoints_and_log(tmpdir, smoke_config, smoke_samples):
    """Test that fit() leaves best and last checkpoints and the metrics CSV."""
    out = str(tmpdir)
    result = Trainer(smoke_config, out).fit(smoke_samples[:20], smoke_samples[20:])
    assert os.path.isfile(os.path.join(out, BEST_CHECKPOINT))
    assert os.path.isfile(os.path.join(out, LAST_CHECKPOINT))
    with open(os.path.join(out, METRICS_FILE), encoding="utf-8") as fptr:
        lines = fptr.read().splitlines()
    assert lines[0] == ",".join(METRICS_COLUMNS)
    assert len(lines) == 1 + smoke_config.train.epochs
    last = checkpoint.load(os.path.join(out, LAST_CHECKPOINT))
    for name, value in result.params.items():
        np.testing.assert_array_equal(last[name], value)
    assert 0 <= result.best_epoch < smoke_config.train.epochs


def test_trainer_rejects_empty_training_split(smoke_config):
    """Test that fit() refuses an empty training split."""
    with pytest.raises(DatasetError):
        Trainer(smoke_config).fit([])


def test_gradcheck_passes_on_sampled_coordinates():
    """Test that BPTT gradients agree with central differences."""
    report = run_gradcheck(max_coords=4)
    assert report.passed, report.lines()


def test_gradcheck_lists_every_parameter_once():
    """Test that the report covers each named tensor exactly once."""
    report = run_gradcheck(max_coords=1)
    names = [entry.name for entry in report.entries]
    assert sorted(names) == sorted(param_shapes(NetConfig.reduced()))
    assert len(names) == len(set(names))


def test_gradcheck_names_corrupted_parameter():
    """Test that a corrupted backward pass fails on the affected tensor."""

    def corrupt(grads):
        grads["rnn1.W_gh"] = grads["rnn1.W_gh"] * 1.5 + 1e-3
        return grads

    report = run_gradcheck(max_coords=4, corrupt=corrupt)
    assert not report.passed
    assert report.failures == ["rnn1.W_gh"]

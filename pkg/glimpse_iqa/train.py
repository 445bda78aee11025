"""Define the training loss, the Adam optimizer and the epoch loop."""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import logging
import math
import os
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from . import ndnum as nd
from .config import NetConfig, RunConfig, TrainConfig
from .data import Sample
from .errors import DatasetError, NonFiniteError, ShapeError
from .evaluation import MetricReport, evaluate
from .imgproc import GrayImage, local_contrast_normalize
from .ndnum import GradCheckEntry, Tensor
from .net import (
    LOCATION_HEAD,
    EpisodeTrace,
    ModelParams,
    forward_episode,
    init_location_head,
    init_params,
)
from .policy import GaussianPolicy, RewardSpec, reinforce_grad_injection, reward, schedules

_LOGGER: logging.Logger = logging.getLogger(__name__)

METRICS_FILE: str = "metrics.csv"
BEST_CHECKPOINT: str = "best.ckpt"
LAST_CHECKPOINT: str = "last.ckpt"
METRICS_COLUMNS: Tuple[str, ...] = (
    "epoch",
    "lr",
    "sigma",
    "epsilon",
    "mean_loss",
    "mean_reward",
    "train_acc",
    "val_srocc",
    "val_lcc",
)
GRADCHECK_TOLERANCE: float = 1e-4
# absolute slack for gradients near zero, above finite-difference round-off
GRADCHECK_FLOOR: float = 1e-5


def total_loss(
    trace: EpisodeTrace, true_class: int, true_score: float, config: TrainConfig
) -> Tensor:
    """
    Return L_cla + λ·L_reg on the episode's tape.

    The reinforcement term has no forward value here; it enters backward() as the
    injections of reinforce_grad_injection.
    """
    regression = nd.mae_loss(trace.score, [float(true_score)])
    if not config.multi_task:
        return nd.scale(regression, config.lambda_reg)
    classification = nd.nll_loss(trace.logits, true_class)
    return nd.add(classification, nd.scale(regression, config.lambda_reg))


@dataclass
class AdamState:
    """First and second moments per parameter, and how often each was stepped."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    step: int = 0

    def forget(self, names: Sequence[str]) -> None:
        """Drop the moments of the given parameters."""
        for name in names:
            self.m.pop(name, None)
            self.v.pop(name, None)
            self.counts.pop(name, None)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    config: TrainConfig = TrainConfig(),
) -> ModelParams:
    """
    Return new parameters after one bias-corrected Adam update.

    A parameter whose gradient is missing or all zero is skipped outright: its
    moments are left undecayed and its step count does not advance.
    """
    beta1, beta2, eps = config.beta1, config.beta2, config.adam_eps
    state.step += 1
    updated = ModelParams()
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None or not np.any(grad):
            updated[name] = value
            continue
        if grad.shape != value.shape:
            raise ShapeError(f"Gradient for {name} has shape {grad.shape}, expected {value.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * grad
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * grad * grad
        t = state.counts.get(name, 0) + 1
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        state.m[name], state.v[name], state.counts[name] = m, v, t
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Return the learning rate: linear from lr_start at epoch 0 to lr_end at the last epoch."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"Epoch {epoch} outside 0..{config.epochs - 1}")
    if config.epochs == 1:
        return config.lr_start
    fraction = epoch / (config.epochs - 1)
    return config.lr_start + (config.lr_end - config.lr_start) * fraction


def saturation_fraction(mu_values, saturation: float) -> float:
    """Return the share of μ components whose magnitude exceeds the saturation level."""
    mu = np.asarray(mu_values, dtype=float).reshape(-1)
    if mu.size == 0:
        return 0.0
    return float(np.mean(np.abs(mu) > saturation))


def stability_reset(
    params: ModelParams, mu_values, config: RunConfig, rng: np.random.Generator
) -> bool:
    """Redraw the location head when the batch's μ has collapsed onto the border."""
    fraction = saturation_fraction(mu_values, config.train.reset_saturation)
    if fraction <= config.train.reset_fraction:
        return False
    init_location_head(params, config.net, rng)
    _LOGGER.info(
        "Location head reset: %.1f%% of μ components beyond %.3f",
        100.0 * fraction,
        config.train.reset_saturation,
    )
    return True


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place to a global L2 norm of at most max_norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


@dataclass(frozen=True)
class EpisodeOutcome:
    """What one training episode contributes to its batch."""

    grads: Dict[str, np.ndarray]
    loss: float
    reward: int
    correct: bool
    mu_values: np.ndarray


@dataclass
class EpochMetrics:
    """One row of the training log."""

    epoch: int
    lr: float
    sigma: float
    epsilon: float
    mean_loss: float
    mean_reward: float
    train_acc: float
    val_srocc: Optional[float] = None
    val_lcc: Optional[float] = None
    resets: int = 0

    def as_row(self) -> List[str]:
        """Return the CSV cells; undefined validation metrics stay empty."""
        cells = []
        for column in METRICS_COLUMNS:
            value = getattr(self, column)
            cells.append("" if value is None else repr(value))
        return cells


def _run_episode(
    params: ModelParams,
    sample: Sample,
    config: RunConfig,
    policy: GaussianPolicy,
    batch_size: int,
) -> EpisodeOutcome:
    l0 = policy.rng.uniform(-1.0, 1.0, size=2)
    trace = forward_episode(params, sample.image, l0, config.net, policy)
    loss = total_loss(trace, sample.distortion_type, sample.mos, config.train)
    spec = RewardSpec(config.policy.score_threshold, use_class=config.train.multi_task)
    earned = reward(
        trace.predicted_class, sample.distortion_type, trace.predicted_score, sample.mos, spec
    )
    injections = reinforce_grad_injection(
        trace,
        earned,
        policy.sigma,
        config.train.alpha_rein,
        batch_size=batch_size,
        baseline=config.policy.baseline,
    )
    grads = nd.backward(trace.tape, nd.scale(loss, 1.0 / batch_size), injections)
    return EpisodeOutcome(
        grads,
        loss.item(),
        earned,
        trace.predicted_class == sample.distortion_type,
        trace.mu_values,
    )


def train_epoch(
    params: ModelParams,
    samples: Sequence[Sample],
    state: AdamState,
    config: RunConfig,
    epoch: int,
) -> Tuple[ModelParams, EpochMetrics]:
    """
    Run one pass over the prepared samples and return the updated parameters.

    Every random draw is derived from (seed, epoch, batch, item), so the
    result does not depend on how many threads run the episodes.
    """
    if not samples:
        raise DatasetError("Cannot train on an empty split")
    missing = [s.path for s in samples if s.image is None]
    if missing:
        raise DatasetError(f"Samples must be prepared before training, e.g. {missing[0]}")
    lr = lr_schedule(epoch, config.train)
    sigma, epsilon = schedules(epoch, config.policy)
    seed = config.seed
    order = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(len(samples))
    batch_size = config.train.batch_size
    losses: List[float] = []
    rewards: List[int] = []
    correct = 0
    resets = 0

    with ThreadPoolExecutor(max_workers=config.threads) as executor:
        for batch, start in enumerate(range(0, len(order), batch_size)):
            members = [samples[i] for i in order[start : start + batch_size]]
            m = len(members)

            def run(item: int, sample: Sample, batch: int = batch) -> EpisodeOutcome:
                policy = GaussianPolicy.seeded(sigma, epsilon, seed, epoch, batch, item)
                try:
                    return _run_episode(params, sample, config, policy, m)
                except NonFiniteError as err:
                    raise NonFiniteError(
                        f"epoch {epoch} batch {batch} sample {sample.path}: {err}"
                    ) from None

            outcomes = list(executor.map(run, range(m), members))

            grads = params.zeros_like()
            for outcome in outcomes:
                for name, grad in outcome.grads.items():
                    grads[name] = grads[name] + grad
                losses.append(outcome.loss)
                rewards.append(outcome.reward)
                correct += int(outcome.correct)
            if config.train.freeze_location:
                for name in LOCATION_HEAD:
                    grads[name] = np.zeros_like(grads[name])
            if config.train.grad_clip > 0:
                clip_gradients(grads, config.train.grad_clip)
            params = adam_step(params, grads, state, lr, config.train)
            if not params.all_finite():
                raise NonFiniteError(f"epoch {epoch} batch {batch}: parameters became non-finite")
            _LOGGER.debug(
                "Epoch %d batch %d: loss %.4f reward %.3f",
                epoch,
                batch,
                float(np.mean([o.loss for o in outcomes])),
                float(np.mean([o.reward for o in outcomes])),
            )
            if not config.train.freeze_location:
                mu_values = np.concatenate([o.mu_values for o in outcomes])
                reset_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, epoch, batch, len(samples)])
                )
                if stability_reset(params, mu_values, config, reset_rng):
                    state.forget(LOCATION_HEAD)
                    resets += 1

    mean_loss = float(np.mean(losses))
    if not math.isfinite(mean_loss):
        raise NonFiniteError(f"epoch {epoch}: mean loss is not finite")
    return params, EpochMetrics(
        epoch,
        lr,
        sigma,
        epsilon,
        mean_loss,
        float(np.mean(rewards)),
        correct / len(samples),
        resets=resets,
    )


@dataclass
class TrainResult:
    """The outcome of a full training run."""

    params: ModelParams
    best_params: ModelParams
    best_epoch: int
    best_srocc: Optional[float]
    history: List[EpochMetrics]


class Trainer:
    """Run the epoch loop, log metrics and keep the best and last checkpoints."""

    def __init__(
        self,
        config: RunConfig,
        out_dir: Optional[str] = None,
        params: Optional[ModelParams] = None,
    ) -> None:
        """Initialize."""
        self.config: RunConfig = config
        self.out_dir: Optional[str] = out_dir
        self.params: ModelParams = params if params is not None else init_params(
            config.net, np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
        )
        self.state: AdamState = AdamState()
        self.history: List[EpochMetrics] = []

    def __repr__(self) -> str:
        return f"<Trainer epochs={self.config.train.epochs} seed={self.config.seed}>"

    def fit(
        self,
        train: Sequence[Sample],
        val: Sequence[Sample] = (),
        on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
    ) -> TrainResult:
        """Train for config.train.epochs epochs, selecting on validation SROCC."""
        if not train:
            raise DatasetError("Training split is empty")
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
        best_params = self.params.copy()
        best_epoch, best_srocc = -1, None
        log = _MetricsLog(os.path.join(self.out_dir, METRICS_FILE) if self.out_dir else None)
        try:
            for epoch in range(self.config.train.epochs):
                self.params, metrics = train_epoch(
                    self.params, train, self.state, self.config, epoch
                )
                if val:
                    report = evaluate(self.params, val, self.config.net, threads=self.config.threads)
                    metrics.val_srocc, metrics.val_lcc = report.srocc, report.lcc
                self.history.append(metrics)
                log.write(metrics)
                _LOGGER.info(
                    "Epoch %d: loss %.4f reward %.3f acc %.3f val SROCC %s",
                    epoch,
                    metrics.mean_loss,
                    metrics.mean_reward,
                    metrics.train_acc,
                    "undefined" if metrics.val_srocc is None else f"{metrics.val_srocc:.4f}",
                )
                if best_epoch < 0 or _better(metrics.val_srocc, best_srocc):
                    best_params = self.params.copy()
                    best_epoch, best_srocc = epoch, metrics.val_srocc
                    if self.out_dir:
                        checkpoint.save(best_params, os.path.join(self.out_dir, BEST_CHECKPOINT))
                if on_epoch is not None:
                    on_epoch(metrics)
        finally:
            log.close()
        if self.out_dir:
            checkpoint.save(self.params, os.path.join(self.out_dir, LAST_CHECKPOINT))
        return TrainResult(self.params, best_params, best_epoch, best_srocc, self.history)


def _better(candidate: Optional[float], incumbent: Optional[float]) -> bool:
    if candidate is None:
        return False
    return incumbent is None or candidate > incumbent


class _MetricsLog:
    """Append EpochMetrics rows to a CSV file as they arrive."""

    def __init__(self, path: Optional[str]) -> None:
        self._fptr = None
        self._writer = None
        if path:
            self._fptr = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fptr, lineterminator="\n")
            self._writer.writerow(METRICS_COLUMNS)

    def write(self, metrics: EpochMetrics) -> None:
        if self._writer is not None:
            self._writer.writerow(metrics.as_row())
            self._fptr.flush()

    def close(self) -> None:
        if self._fptr is not None:
            self._fptr.close()
            self._fptr = None


def train_and_evaluate(
    config: RunConfig,
    train: Sequence[Sample],
    val: Sequence[Sample],
    test: Sequence[Sample],
    out_dir: Optional[str] = None,
    class_names: Sequence[str] = (),
) -> MetricReport:
    """Train on one split, then evaluate the best-validation checkpoint on its test part."""
    result = Trainer(config, out_dir).fit(train, val)
    return evaluate(
        result.best_params, test, config.net, threads=config.threads, class_names=class_names
    )


@dataclass(frozen=True)
class GradCheckReport:
    """Per-parameter worst relative error of a whole-model gradient check."""

    entries: List[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(entry.passed(self.tolerance) for entry in self.entries)

    @property
    def failures(self) -> List[str]:
        return [e.name for e in self.entries if not e.passed(self.tolerance)]

    def lines(self) -> List[str]:
        """Return a printable table, one parameter per line."""
        rows = [f"{'parameter':<18} {'max_rel_err':>12} {'coords':>7}  status"]
        for entry in self.entries:
            status = "ok" if entry.passed(self.tolerance) else "FAIL"
            rows.append(
                f"{entry.name:<18} {entry.max_rel_error:>12.3e} {entry.checked:>7d}  {status}"
            )
        return rows


def run_gradcheck(
    net: Optional[NetConfig] = None,
    train: TrainConfig = TrainConfig(),
    *,
    seed: int = 0,
    image_size: int = 24,
    max_coords: Optional[int] = None,
    step: float = 1e-5,
    tolerance: float = GRADCHECK_TOLERANCE,
    corrupt: Optional[Callable[[Dict[str, np.ndarray]], Dict[str, np.ndarray]]] = None,
) -> GradCheckReport:
    """
    Compare BPTT gradients of the supervised loss with central differences.

    The episode replays a fixed fixation sequence so that perturbed parameters never
    move a glimpse window. `corrupt` may rewrite the analytic gradients before the
    comparison.
    """
    net = net or NetConfig.reduced()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C4]))
    params = init_params(net, rng)
    for name in params:
        # lift biases off zero so no unit sits exactly on a kink
        if params[name].ndim == 1 and name != "score.b2":
            params[name] = rng.uniform(-0.1, 0.1, size=params[name].shape)
    image = local_contrast_normalize(GrayImage(rng.uniform(0.0, 1.0, (image_size, image_size))))
    fixations = rng.uniform(-1.0, 1.0, size=(net.steps, 2))
    label = int(rng.integers(net.n_classes))
    mos = float(rng.uniform(0.0, 9.0))

    def loss_of(values: Mapping[str, np.ndarray], record: bool):
        trace = forward_episode(
            ModelParams(values), image, None, net, fixations=fixations, record=record
        )
        return trace, total_loss(trace, label, mos, train)

    trace, loss = loss_of(params, True)
    analytic = nd.backward(trace.tape, loss)
    if corrupt is not None:
        analytic = corrupt(dict(analytic))
    entries = nd.check_named_gradients(
        lambda values: loss_of(values, False)[1].item(),
        params,
        analytic,
        step=step,
        max_coords=max_coords,
        seed=seed,
        floor=GRADCHECK_FLOOR,
    )
    report = GradCheckReport(entries, tolerance)
    _LOGGER.info(
        "Gradient check over %d parameters: %s",
        len(entries),
        "pass" if report.passed else f"FAIL ({', '.join(report.failures)})",
    )
    return report

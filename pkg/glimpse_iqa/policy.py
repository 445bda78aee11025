"""Define the Gaussian location policy, the episode reward and the REINFORCE term."""
from dataclasses import dataclass
import logging
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import numpy as np

from .config import PolicyConfig
from .errors import ConfigError

if TYPE_CHECKING:
    from .ndnum import Tensor
    from .net import EpisodeTrace  # pylint: disable=cyclic-import

_LOGGER: logging.Logger = logging.getLogger(__name__)

LOG_2PI: float = float(np.log(2.0 * np.pi))


class GaussianPolicy:
    """An isotropic Gaussian around μ with ε-greedy uniform exploration."""

    def __init__(self, sigma: float, epsilon: float, rng: np.random.Generator) -> None:
        """Initialize."""
        if sigma <= 0:
            raise ConfigError(f"Policy sigma must be positive, got {sigma}")
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError(f"Policy epsilon must lie in [0, 1], got {epsilon}")
        self.sigma: float = float(sigma)
        self.epsilon: float = float(epsilon)
        self.rng: np.random.Generator = rng

    @classmethod
    def seeded(cls, sigma: float, epsilon: float, *entropy: int) -> "GaussianPolicy":
        """Return a policy whose stream is derived from the given integers."""
        return cls(sigma, epsilon, np.random.default_rng(np.random.SeedSequence(list(entropy))))

    def __repr__(self) -> str:
        return f"<GaussianPolicy sigma={self.sigma:.4f} epsilon={self.epsilon:.4f}>"


@dataclass(frozen=True)
class LocationSample:
    """A drawn action and the in-range fixation it becomes."""

    location: np.ndarray
    action: np.ndarray


@dataclass(frozen=True)
class RewardSpec:
    """When an episode earns its reward."""

    score_threshold: float = 0.7
    use_class: bool = True

    def __post_init__(self) -> None:
        if self.score_threshold <= 0:
            raise ConfigError(f"Reward threshold must be positive, got {self.score_threshold}")


def sample_location(policy: GaussianPolicy, mu) -> LocationSample:
    """
    Draw a ~ N(μ, σ²I), or Uniform([−1, 1]²) with probability ε, then clamp.

    `mu` may be a single (2,) location or an (n, 2) batch.
    """
    mu = np.asarray(mu, dtype=float)
    batch = mu.reshape(-1, 2)
    n = batch.shape[0]
    explore = policy.rng.random(n) < policy.epsilon
    gaussian = batch + policy.sigma * policy.rng.standard_normal((n, 2))
    uniform = policy.rng.uniform(-1.0, 1.0, size=(n, 2))
    action = np.where(explore[:, None], uniform, gaussian)
    location = np.clip(action, -1.0, 1.0)
    return LocationSample(location.reshape(mu.shape), action.reshape(mu.shape))


def log_prob(mu, a, sigma: float) -> float:
    """Return log N(a; μ, σ²I) summed over both axes."""
    diff = np.asarray(a, dtype=float) - np.asarray(mu, dtype=float)
    return float(-0.5 * np.sum(diff * diff) / sigma ** 2 - diff.size * (np.log(sigma) + 0.5 * LOG_2PI))


def log_prob_grad(mu, a, sigma: float) -> np.ndarray:
    """Return ∂ log p(a | μ, σ) / ∂μ = (a − μ) / σ²."""
    return (np.asarray(a, dtype=float) - np.asarray(mu, dtype=float)) / sigma ** 2


def reward(
    pred_class: Optional[int],
    true_class: int,
    pred_score: float,
    true_score: float,
    spec: RewardSpec = RewardSpec(),
) -> int:
    """Return 1 if the class is right or the score is within the threshold, else 0."""
    if spec.use_class and pred_class is not None and int(pred_class) == int(true_class):
        return 1
    return int(abs(pred_score - true_score) < spec.score_threshold)


def reinforce_gradient(mu, a, R: float, sigma: float) -> np.ndarray:
    """Return the score-function estimate R·∂ log p / ∂μ for one or many draws."""
    return R * log_prob_grad(mu, a, sigma) if R else np.zeros_like(np.asarray(mu, dtype=float))


def reinforce_grad_injection(
    trace: "EpisodeTrace",
    R: float,
    sigma: float,
    alpha_rein: float,
    *,
    batch_size: int = 1,
    baseline: float = 0.0,
) -> Dict["Tensor", np.ndarray]:
    """
    Return the upstream gradient to add at every μᵗ of an episode.

    The loss subtracts α·J_rein, so each μᵗ receives −α·(R − b)·(aᵗ − μᵗ)/σ² / M.
    """
    advantage = R - baseline
    injections: Dict["Tensor", np.ndarray] = {}
    for step in trace.steps:
        if step.mu is None or step.action is None:
            continue
        grad = reinforce_gradient(step.mu.data, step.action, advantage, sigma)
        injections[step.mu] = -alpha_rein * grad / batch_size
    return injections


def _ramp(epoch: int, start: float, end: float, span: int) -> float:
    if span <= 0 or epoch >= span:
        return end
    return start + (end - start) * epoch / span


def schedules(epoch: int, config: PolicyConfig) -> Tuple[float, float]:
    """Return (σ, ε): linear decline over decay_epochs, then held."""
    if epoch < 0:
        raise ConfigError(f"Epoch must not be negative, got {epoch}")
    sigma = _ramp(epoch, config.sigma_start, config.sigma_end, config.decay_epochs)
    epsilon = _ramp(epoch, config.epsilon_start, config.epsilon_end, config.decay_epochs)
    return sigma, epsilon

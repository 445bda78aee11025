"""Define the glimpse CNN, the two-layer RNN and the output heads."""
from collections import OrderedDict
from dataclasses import dataclass, field
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import ndnum as nd
from .config import NetConfig
from .errors import ShapeError
from .imgproc import GlimpseStack, GrayImage, extract_glimpse
from .ndnum import GraphTape, Tensor
from .policy import GaussianPolicy, sample_location

_LOGGER: logging.Logger = logging.getLogger(__name__)

BRANCHES: Tuple[Tuple[str, int, int], ...] = (
    # suffix, kernel side, share of the layer width (out of 4)
    ("3", 3, 2),
    ("5", 5, 1),
    ("1", 1, 1),
)
LOCATION_HEAD: Tuple[str, str] = ("loc.W_rl", "loc.b_l")
CENTER: Tuple[float, float] = (0.0, 0.0)


def param_shapes(config: NetConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Return the canonical (name → shape) table of every learnable tensor."""
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    c_in = config.in_channels
    side = config.patch_size
    for layer, (width, pool) in enumerate(zip(config.conv_channels, config.pool_after), 1):
        for suffix, kernel, share in BRANCHES:
            c_out = width * share // 4
            shapes[f"conv{layer}.k{suffix}"] = (c_out, c_in, kernel, kernel)
            shapes[f"conv{layer}.b{suffix}"] = (c_out,)
        c_in = width
        side //= side if pool == 0 else pool
    features = c_in * side * side
    gh, rh, hh = config.glimpse_hidden, config.rnn_hidden, config.head_hidden
    shapes["glimpse.patch.W"] = (gh, features)
    shapes["glimpse.patch.b"] = (gh,)
    shapes["glimpse.loc.W"] = (gh, 2)
    shapes["glimpse.loc.b"] = (gh,)
    shapes["glimpse.merge.W"] = (gh, 2 * gh)
    shapes["glimpse.merge.b"] = (gh,)
    shapes["rnn1.W_gh"] = (rh, gh)
    shapes["rnn1.W_hh"] = (rh, rh)
    shapes["rnn1.b_h"] = (rh,)
    shapes["rnn2.W_gh"] = (rh, rh)
    shapes["rnn2.W_hh"] = (rh, rh)
    shapes["rnn2.b_h"] = (rh,)
    shapes["loc.W_rl"] = (2, rh)
    shapes["loc.b_l"] = (2,)
    shapes["score.W1"] = (hh, rh)
    shapes["score.b1"] = (hh,)
    shapes["score.W2"] = (1, hh)
    shapes["score.b2"] = (1,)
    shapes["weight.W"] = (1, rh)
    shapes["weight.b"] = (1,)
    shapes["cls.W1"] = (hh, rh)
    shapes["cls.b1"] = (hh,)
    shapes["cls.W2"] = (config.n_classes, hh)
    shapes["cls.b2"] = (config.n_classes,)
    return shapes


class ModelParams(OrderedDict):
    """Named learnable arrays kept in canonical order."""

    def bind(self, tape: Optional[GraphTape] = None) -> Dict[str, Tensor]:
        """Return the parameters as tape leaves, or as constants without a tape."""
        if tape is None:
            return {name: Tensor(value, name=name) for name, value in self.items()}
        return {name: tape.leaf(value, name) for name, value in self.items()}

    def copy(self) -> "ModelParams":
        return ModelParams((name, value.copy()) for name, value in self.items())

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Return (name → shape)."""
        return {name: value.shape for name, value in self.items()}

    def zeros_like(self) -> Dict[str, np.ndarray]:
        """Return a zero array per parameter."""
        return {name: np.zeros_like(value) for name, value in self.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.values())


def _init_array(name: str, shape: Tuple[int, ...], config: NetConfig, rng) -> np.ndarray:
    if name in LOCATION_HEAD:
        scale = config.loc_init_scale
        return rng.uniform(-scale, scale, size=shape)
    if len(shape) == 1:
        value = np.zeros(shape)
        if name == "score.b2":
            value[:] = config.score_bias_init
        return value
    fan_in = int(np.prod(shape[1:]))
    gain = 3.0 if name.endswith("W_hh") else 6.0
    bound = np.sqrt(gain / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: NetConfig, rng: np.random.Generator) -> ModelParams:
    """Draw a fresh parameter set: fan-in uniform weights, small location head."""
    return ModelParams(
        (name, _init_array(name, shape, config, rng))
        for name, shape in param_shapes(config).items()
    )


def init_location_head(params: ModelParams, config: NetConfig, rng) -> None:
    """Redraw the location head in place from the small-scale initializer."""
    for name in LOCATION_HEAD:
        params[name] = _init_array(name, params[name].shape, config, rng)


@dataclass(frozen=True)
class HiddenState:
    """The two recurrent layers."""

    h1: Tensor
    h2: Tensor

    @classmethod
    def zeros(cls, size: int) -> "HiddenState":
        return cls(Tensor(np.zeros(size)), Tensor(np.zeros(size)))


def _multiscale_conv(p: Mapping[str, Tensor], x: Tensor, layer: int) -> Tensor:
    branches = [
        nd.conv2d(x, p[f"conv{layer}.k{suffix}"], p[f"conv{layer}.b{suffix}"])
        for suffix, _, _ in BRANCHES
    ]
    return nd.relu(nd.concat(branches, axis=0))


def glimpse_forward(
    p: Mapping[str, Tensor], stack, l: Sequence[float], config: NetConfig
) -> Tensor:
    """Return the glimpse feature g from a patch stack and its (detached) location."""
    patches = stack.patches if isinstance(stack, GlimpseStack) else np.asarray(stack)
    expected = (config.in_channels, config.patch_size, config.patch_size)
    if patches.shape != expected:
        raise ShapeError(f"Glimpse stack {patches.shape} does not match {expected}")
    x = Tensor(patches)
    for layer, pool in enumerate(config.pool_after, 1):
        x = _multiscale_conv(p, x, layer)
        if pool == 0:
            x = nd.avg_pool(x, x.shape[1])
        elif pool > 1:
            x = nd.avg_pool(x, pool)
    what = nd.relu(nd.linear(nd.flatten(x), p["glimpse.patch.W"], p["glimpse.patch.b"]))
    where = nd.relu(
        nd.linear(Tensor(np.asarray(l, dtype=float)), p["glimpse.loc.W"], p["glimpse.loc.b"])
    )
    merged = nd.concat([what, where])
    return nd.relu(nd.linear(merged, p["glimpse.merge.W"], p["glimpse.merge.b"]))


def rnn_step(p: Mapping[str, Tensor], g: Tensor, prev: HiddenState) -> HiddenState:
    """Advance both recurrent layers by one step."""
    h1 = nd.relu(
        nd.add(nd.linear(g, p["rnn1.W_gh"], p["rnn1.b_h"]), nd.linear(prev.h1, p["rnn1.W_hh"]))
    )
    h2 = nd.relu(
        nd.add(nd.linear(h1, p["rnn2.W_gh"], p["rnn2.b_h"]), nd.linear(prev.h2, p["rnn2.W_hh"]))
    )
    return HiddenState(h1, h2)


def location_head(p: Mapping[str, Tensor], h2: Tensor) -> Tensor:
    """Return the policy mean μ in [−1, 1]²."""
    return nd.hardtanh(nd.linear(h2, p["loc.W_rl"], p["loc.b_l"]))


def score_and_weight_head(p: Mapping[str, Tensor], h2: Tensor) -> Tuple[Tensor, Tensor]:
    """Return the per-step score sᵗ ≥ 0 and its unnormalised weight αᵗ."""
    hidden = nd.relu(nd.linear(h2, p["score.W1"], p["score.b1"]))
    score = nd.relu(nd.linear(hidden, p["score.W2"], p["score.b2"]))
    weight = nd.linear(h2, p["weight.W"], p["weight.b"])
    return score, weight


def classification_head(p: Mapping[str, Tensor], h2: Tensor) -> Tensor:
    """Return distortion-type logits; softmax is applied by the loss."""
    hidden = nd.relu(nd.linear(h2, p["cls.W1"], p["cls.b1"]))
    return nd.linear(hidden, p["cls.W2"], p["cls.b2"])


def robust_average(
    scores: Sequence[Tensor], raw_weights: Sequence[Tensor]
) -> Tuple[Tensor, Tensor]:
    """Return (Σ softmax(α)ᵗ sᵗ, softmax(α))."""
    if len(scores) != len(raw_weights):
        raise ShapeError(f"{len(scores)} scores but {len(raw_weights)} weights")
    if not scores:
        raise ShapeError("Robust averaging needs at least one step")
    weights = nd.softmax(nd.concat([nd.as_tensor(w) for w in raw_weights]))
    return nd.dot(weights, nd.concat([nd.as_tensor(s) for s in scores])), weights


def aggregate_score(scores: Sequence[Tensor], raw_weights: Sequence[Tensor]) -> Tensor:
    """Return the reliability-weighted mean of the per-step scores."""
    return robust_average(scores, raw_weights)[0]


@dataclass
class EpisodeStep:
    """What happened at one fixation."""

    location: np.ndarray
    center: Tuple[int, int]
    g: Tensor
    hidden: HiddenState
    score: Tensor
    raw_weight: Tensor
    mu: Optional[Tensor] = None
    action: Optional[np.ndarray] = None


@dataclass
class EpisodeTrace:
    """The record of one T-step forward pass, enough for BPTT and REINFORCE."""

    steps: List[EpisodeStep]
    logits: Tensor
    weights: Tensor
    score: Tensor
    tape: Optional[GraphTape]
    sigma: Optional[float] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def predicted_class(self) -> int:
        """Return argmax of the logits, lowest index on ties."""
        return int(np.argmax(self.logits.data))

    @property
    def predicted_score(self) -> float:
        return self.score.item()

    @property
    def locations(self) -> np.ndarray:
        """Return the T fixations actually used, shape (T, 2)."""
        return np.array([step.location for step in self.steps])

    @property
    def mu_values(self) -> np.ndarray:
        """Return the policy means that produced fixations 2..T, shape (T−1, 2)."""
        return np.array([step.mu.data for step in self.steps if step.mu is not None]).reshape(-1, 2)


def _clamp(l) -> np.ndarray:
    return np.clip(np.asarray(l, dtype=float).reshape(2), -1.0, 1.0)


def forward_episode(
    params: ModelParams,
    img: GrayImage,
    l0: Optional[Sequence[float]],
    config: NetConfig,
    policy: Optional[GaussianPolicy] = None,
    *,
    fixations: Optional[Sequence[Sequence[float]]] = None,
    record: bool = True,
) -> EpisodeTrace:
    """
    Run glimpse → RNN → heads for config.steps fixations.

    With a policy, fixations after the first are sampled around μ (training); without
    one they are μ itself (evaluation). `fixations` replays a fixed sequence instead.
    """
    steps = config.steps
    if steps < 1:
        raise ShapeError(f"An episode needs at least one step, got {steps}")
    if fixations is not None and len(fixations) != steps:
        raise ShapeError(f"{len(fixations)} fixations given for {steps} steps")
    tape = GraphTape() if record else None
    p = params.bind(tape)
    hidden = HiddenState.zeros(config.rnn_hidden)
    trace_steps: List[EpisodeStep] = []
    for k in range(steps):
        mu, action = None, None
        if k > 0:
            mu = location_head(p, hidden.h2)
        if fixations is not None:
            location = _clamp(fixations[k])
        elif k == 0:
            location = _clamp(CENTER if l0 is None else l0)
        elif policy is not None:
            sample = sample_location(policy, mu.data)
            location, action = sample.location, sample.action
        else:
            location = _clamp(mu.data)
        stack = extract_glimpse(img, location, config.used_scales, config.patch_size)
        g = glimpse_forward(p, stack, location, config)
        hidden = rnn_step(p, g, hidden)
        score, raw_weight = score_and_weight_head(p, hidden.h2)
        trace_steps.append(
            EpisodeStep(location, stack.center, g, hidden, score, raw_weight, mu, action)
        )
    logits = classification_head(p, hidden.h2)
    used = trace_steps[config.aggregate_from - 1 :]
    if config.robust_averaging:
        score, weights = robust_average([s.score for s in used], [s.raw_weight for s in used])
    else:
        score = trace_steps[-1].score
        weights = Tensor(np.eye(len(used))[-1])
    return EpisodeTrace(
        trace_steps,
        logits,
        weights,
        score,
        tape,
        sigma=policy.sigma if policy is not None else None,
    )

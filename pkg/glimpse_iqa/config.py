"""Define the run configuration and its INI file format."""
import configparser
from dataclasses import dataclass, field, fields, replace
import logging
import os
import re
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, get_type_hints

from .errors import ConfigError
from .types import DistortionKind

_LOGGER: logging.Logger = logging.getLogger(__name__)

ENV_SEED: str = "GLIMPSE_IQA_SEED"
ENV_THREADS: str = "GLIMPSE_IQA_THREADS"

DATA_SOURCES: Tuple[str, ...] = ("synthetic", "tid2008", "directory")


@dataclass(frozen=True)
class DataConfig:
    """Where samples come from and how they are preprocessed and split."""

    source: str = "synthetic"
    root: str = ""
    n_references: int = 20
    image_size: int = 160
    kinds: Tuple[str, ...] = tuple(kind.value for kind in DistortionKind)
    levels: int = 4
    types: Tuple[int, ...] = ()
    ratios: Tuple[float, ...] = (0.6, 0.2, 0.2)
    split_seed: int = 0
    lcn_window: int = 7
    lcn_eps: float = 1e-4


@dataclass(frozen=True)
class NetConfig:
    """Layer widths, glimpse geometry and episode length of the model."""

    patch_size: int = 32
    scales: Tuple[int, ...] = (32, 96, 288)
    conv_channels: Tuple[int, ...] = (32, 64, 64, 128)
    # 0 pools whatever spatial extent remains
    pool_after: Tuple[int, ...] = (2, 1, 2, 0)
    glimpse_hidden: int = 128
    rnn_hidden: int = 256
    head_hidden: int = 128
    n_classes: int = 15
    steps: int = 5
    multi_resolution: bool = True
    robust_averaging: bool = True
    aggregate_from: int = 1
    loc_init_scale: float = 0.01
    score_bias_init: float = 4.5

    @classmethod
    def reduced(cls, n_classes: int = 4) -> "NetConfig":
        """Return the narrow model used by gradient checks."""
        return cls(
            patch_size=8,
            scales=(8, 16, 32),
            conv_channels=(8, 8, 8, 16),
            glimpse_hidden=16,
            rnn_hidden=32,
            head_hidden=16,
            n_classes=n_classes,
            steps=3,
        )

    @classmethod
    def desk(cls, n_classes: int = 4) -> "NetConfig":
        """Return the default model on 16/48/144 glimpses for synthetic data."""
        return cls(patch_size=16, scales=(16, 48, 144), n_classes=n_classes)

    @property
    def in_channels(self) -> int:
        """Return how many scale channels the CNN reads."""
        return len(self.scales) if self.multi_resolution else 1

    @property
    def used_scales(self) -> Tuple[int, ...]:
        """Return the glimpse scales fed to the CNN."""
        return self.scales if self.multi_resolution else self.scales[:1]


@dataclass(frozen=True)
class PolicyConfig:
    """Exploration schedule and reward of the location policy."""

    sigma_start: float = 0.16
    sigma_end: float = 0.10
    epsilon_start: float = 0.10
    epsilon_end: float = 0.0
    decay_epochs: int = 100
    score_threshold: float = 0.7
    baseline: float = 0.0


@dataclass(frozen=True)
class TrainConfig:
    """Loss weights, optimiser and loop settings."""

    lambda_reg: float = 1.0
    alpha_rein: float = 0.01
    epochs: int = 1000
    lr_start: float = 0.001
    lr_end: float = 0.0001
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    multi_task: bool = True
    reset_saturation: float = 0.999
    reset_fraction: float = 0.9
    grad_clip: float = 0.0
    freeze_location: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs."""

    seed: int = 0
    output_dir: str = "runs"
    threads: int = 1
    n_splits: int = 5
    data: DataConfig = field(default_factory=DataConfig)
    net: NetConfig = field(default_factory=NetConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        """Raise ConfigError naming the first out-of-range key."""
        for key, message in _problems(self):
            raise ConfigError(f"{key}: {message}")

    def dumps(self) -> str:
        """Return the canonical INI text of this configuration."""
        lines = ["[run]"]
        for name in RUN_KEYS:
            lines.append(f"{name} = {_format(getattr(self, name))}")
        for section in SECTIONS:
            lines.append("")
            lines.append(f"[{section}]")
            block = getattr(self, section)
            for item in fields(block):
                lines.append(f"{item.name} = {_format(getattr(block, item.name))}")
        return "\n".join(lines) + "\n"


SECTIONS: Tuple[str, ...] = ("data", "net", "policy", "train")
RUN_KEYS: Tuple[str, ...] = ("seed", "output_dir", "threads", "n_splits")
_SECTION_TYPES = {
    "data": DataConfig,
    "net": NetConfig,
    "policy": PolicyConfig,
    "train": TrainConfig,
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(item) for item in value)
    return str(value)


def _coerce(raw: str, hint):
    text = raw.strip()
    if hint is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    item_type = hint.__args__[0]
    if not text:
        return ()
    return tuple(_coerce(part, item_type) for part in text.split(","))


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """Map (section, key) to the 1-based line where it is assigned."""
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        header = re.match(r"\s*\[([^\]]+)\]", line)
        if header:
            section = header.group(1).strip()
            continue
        assignment = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*[=:]", line)
        if assignment:
            lines.setdefault((section, assignment.group(1).lower()), number)
    return lines


def _problems(config: RunConfig) -> Iterator[Tuple[str, str]]:
    """Yield (section.key, message) for every out-of-range value."""
    data, net, policy, train = config.data, config.net, config.policy, config.train

    def positive(section, block, *names):
        for name in names:
            if getattr(block, name) <= 0:
                yield f"{section}.{name}", "must be positive"

    def unit(section, block, *names):
        for name in names:
            if not 0.0 <= getattr(block, name) <= 1.0:
                yield f"{section}.{name}", "must lie in [0, 1]"

    if config.threads < 1:
        yield "run.threads", "must be at least 1"
    if config.n_splits < 1 or config.n_splits % 2 == 0:
        yield "run.n_splits", "must be a positive odd number"
    if data.source not in DATA_SOURCES:
        yield "data.source", f"must be one of {', '.join(DATA_SOURCES)}"
    if data.source != "synthetic" and not data.root:
        yield "data.root", f"is required for the {data.source} source"
    yield from positive(
        "data", data, "n_references", "image_size", "levels", "lcn_window", "lcn_eps"
    )
    for kind in data.kinds:
        if kind not in {k.value for k in DistortionKind}:
            yield "data.kinds", f"unknown distortion kind {kind!r}"
    if not 1 <= data.levels <= 4:
        yield "data.levels", "must lie in 1..4"
    if len(data.ratios) != 3 or abs(sum(data.ratios) - 1.0) > 1e-9:
        yield "data.ratios", "must be three fractions summing to 1"
    if data.lcn_window % 2 == 0:
        yield "data.lcn_window", "must be odd"
    yield from positive(
        "net", net, "patch_size", "glimpse_hidden", "rnn_hidden", "head_hidden",
        "n_classes", "steps", "loc_init_scale",
    )
    if len(net.scales) != 3 or any(b <= a for a, b in zip(net.scales, net.scales[1:])):
        yield "net.scales", "must be three strictly increasing sides"
    elif any(side % net.patch_size for side in net.scales):
        yield "net.scales", "each scale must be a multiple of net.patch_size"
    if len(net.conv_channels) != 4 or any(c <= 0 or c % 4 for c in net.conv_channels):
        yield "net.conv_channels", "must be four widths divisible by 4"
    if len(net.pool_after) != len(net.conv_channels) or any(p < 0 for p in net.pool_after):
        yield "net.pool_after", "must give one non-negative pool size per conv layer"
    elif _pooled_side(net) is None:
        yield "net.pool_after", f"pool sizes do not divide patch side {net.patch_size}"
    if not 1 <= net.aggregate_from <= net.steps:
        yield "net.aggregate_from", "must lie in 1..steps"
    yield from positive("policy", policy, "sigma_start", "sigma_end", "score_threshold")
    yield from unit("policy", policy, "epsilon_start", "epsilon_end")
    if policy.decay_epochs < 0:
        yield "policy.decay_epochs", "must not be negative"
    yield from positive(
        "train", train, "epochs", "lr_start", "lr_end", "batch_size", "adam_eps"
    )
    for name in ("lambda_reg", "alpha_rein", "grad_clip"):
        if getattr(train, name) < 0:
            yield f"train.{name}", "must not be negative"
    yield from unit("train", train, "beta1", "beta2", "reset_saturation", "reset_fraction")


def _pooled_side(net: NetConfig) -> Optional[int]:
    side = net.patch_size
    for pool in net.pool_after:
        size = side if pool == 0 else pool
        if side % size:
            return None
        side //= size
    return side


def loads(text: str, source: str = "<config>") -> RunConfig:
    """Parse INI text into a validated RunConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    lines = _key_lines(text)

    def where(section: str, key: str) -> str:
        number = lines.get((section, key))
        return f"{source}:{number}" if number else source

    for section in parser.sections():
        if section != "run" and section not in _SECTION_TYPES:
            raise ConfigError(f"{source}: unknown section [{section}]")

    def build(section: str, cls, keys: List[str]):
        hints = get_type_hints(cls)
        values = {}
        if not parser.has_section(section):
            return values
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"{where(section, key)}: unknown key {section}.{key}")
            try:
                values[key] = _coerce(raw, hints[key])
            except (ValueError, TypeError) as err:
                raise ConfigError(f"{where(section, key)}: {section}.{key}: {err}") from None
        return values

    run_values = build("run", RunConfig, list(RUN_KEYS))
    blocks = {
        section: cls(**build(section, cls, [f.name for f in fields(cls)]))
        for section, cls in _SECTION_TYPES.items()
    }
    config = RunConfig(**run_values, **blocks)
    for key, message in _problems(config):
        section, name = key.split(".", 1)
        raise ConfigError(f"{where(section, name)}: {key}: {message}")
    return config


def load(path: str) -> RunConfig:
    """Read and parse a configuration file."""
    try:
        with open(path, encoding="utf-8") as fptr:
            text = fptr.read()
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err.strerror}") from None
    return loads(text, source=path)


def apply_environment(
    config: RunConfig, environ: Optional[Mapping[str, str]] = None
) -> RunConfig:
    """Return the config with GLIMPSE_IQA_SEED / GLIMPSE_IQA_THREADS applied."""
    environ = os.environ if environ is None else environ
    updates = {}
    for name, key in ((ENV_SEED, "seed"), (ENV_THREADS, "threads")):
        if name not in environ:
            continue
        try:
            updates[key] = int(environ[name])
        except ValueError:
            raise ConfigError(f"{name} must be an integer, got {environ[name]!r}") from None
    if not updates:
        return config
    _LOGGER.debug("Environment overrides: %s", updates)
    config = replace(config, **updates)
    config.validate()
    return config

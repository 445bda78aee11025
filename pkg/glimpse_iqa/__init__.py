"""Define package-level exports."""
from .config import RunConfig, load as load_config  # noqa
from .evaluation import MetricReport, evaluate, lcc, srocc  # noqa
from .net import ModelParams, forward_episode, init_params  # noqa
from .train import Trainer  # noqa

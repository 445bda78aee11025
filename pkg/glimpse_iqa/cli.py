"""Define the glimpse-iqa command line."""
import argparse
from dataclasses import replace
import logging
import os
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import checkpoint
from .__version__ import __version__
from .config import NetConfig, RunConfig, apply_environment, load
from .data import (
    DatasetIndex,
    Sample,
    load_dataset,
    load_image,
    prepare,
    split_by_reference,
    synthetic_index,
    write_dataset,
)
from .errors import CheckpointError, ConfigError, GlimpseIQAError, exit_code_for
from .evaluation import (
    MetricReport,
    evaluate,
    median_over_splits,
    predict,
    summary_text,
    write_report,
)
from .imgproc import local_contrast_normalize
from .net import ModelParams, param_shapes
from .scanpath import write_png, write_svg
from .train import GRADCHECK_TOLERANCE, Trainer, run_gradcheck, train_and_evaluate

_LOGGER: logging.Logger = logging.getLogger(__name__)

CONFIG_COPY: str = "config.ini"


def _config(args: argparse.Namespace) -> RunConfig:
    config = load(args.config) if args.config else RunConfig()
    config = apply_environment(config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    config.validate()
    return config


def _check_classes(config: RunConfig, index: DatasetIndex) -> None:
    if config.net.n_classes != index.n_classes:
        raise ConfigError(
            f"net.n_classes is {config.net.n_classes} but the dataset has {index.n_classes} classes"
        )


def _splits(
    config: RunConfig, split_seed: int
) -> Tuple[DatasetIndex, List[Sample], List[Sample], List[Sample]]:
    index = load_dataset(config.data, config.seed)
    _check_classes(config, index)
    train, val, test = split_by_reference(index, config.data.ratios, split_seed)
    return (
        index,
        prepare(train.samples, config.data),
        prepare(val.samples, config.data),
        prepare(test.samples, config.data),
    )


def _load_params(path: str, config: NetConfig) -> ModelParams:
    params = checkpoint.load(path)
    diff = checkpoint.diff_shapes(param_shapes(config), params.shapes())
    if diff:
        for line in diff:
            print(line, file=sys.stderr)
        raise CheckpointError(
            f"{path} does not match the configured model ({len(diff)} tensors differ)"
        )
    return params


def cmd_train(args: argparse.Namespace) -> int:
    """Train on the configured dataset and write checkpoints plus the metrics log."""
    config = _config(args)
    out_dir = args.out or config.output_dir
    index, train, val, _ = _splits(config, config.data.split_seed)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, CONFIG_COPY), "w", encoding="utf-8") as fptr:
        fptr.write(config.dumps())
    result = Trainer(config, out_dir).fit(train, val)
    srocc = "undefined" if result.best_srocc is None else f"{result.best_srocc:.4f}"
    print(f"best epoch {result.best_epoch} (val SROCC {srocc}), checkpoints in {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate a checkpoint on the test split."""
    config = _config(args)
    out_dir = args.out or config.output_dir
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    params = _load_params(args.checkpoint, config.net)
    index, _, _, test = _splits(config, config.data.split_seed)
    report = evaluate(
        params, test, config.net, threads=config.threads, class_names=index.class_names
    )
    write_report(report, out_dir)
    sys.stdout.write(summary_text(report))
    return 0


def cmd_visualize(args: argparse.Namespace) -> int:
    """Render the deterministic scanpath of one image."""
    config = _config(args)
    if not args.checkpoint or not args.image:
        raise ConfigError("visualize needs --checkpoint and --image")
    params = _load_params(args.checkpoint, config.net)
    raw = load_image(args.image)
    sample = Sample(
        args.image,
        float("nan"),
        0,
        0,
        0,
        image=local_contrast_normalize(raw, config.data.lcn_window, config.data.lcn_eps),
    )
    trace = predict(params, sample, config.net)
    out = args.out or os.path.splitext(os.path.basename(args.image))[0] + ".svg"
    title = f"score {trace.predicted_score:.3f}, class {trace.predicted_class}"
    if out.lower().endswith(".png"):
        write_png(raw, trace, config.net.used_scales, out)
    else:
        write_svg(raw, trace, config.net.used_scales, out, title)
    print(f"{title} -> {out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Check BPTT gradients of a reduced-width model against finite differences."""
    config = _config(args)
    net = replace(
        NetConfig.reduced(config.net.n_classes),
        multi_resolution=config.net.multi_resolution,
        robust_averaging=config.net.robust_averaging,
    )
    report = run_gradcheck(net, config.train, seed=config.seed, max_coords=args.max_coords)
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"PASS: every gradient within {GRADCHECK_TOLERANCE:g}")
        return 0
    print(f"FAIL: {', '.join(report.failures)}")
    return 1


def cmd_synth(args: argparse.Namespace) -> int:
    """Write the configured synthetic dataset to disk."""
    config = _config(args)
    out_dir = args.out or os.path.join(config.output_dir, "synthetic")
    index = synthetic_index(config.data, config.seed)
    write_dataset(index, out_dir)
    print(f"wrote {len(index)} images to {out_dir}")
    return 0


def cmd_protocol(args: argparse.Namespace) -> int:
    """Train and evaluate on n_splits split seeds and report the median."""
    config = _config(args)
    out_dir = args.out or config.output_dir
    seeds = [config.data.split_seed + i for i in range(config.n_splits)]

    def run(split_seed: int) -> MetricReport:
        index, train, val, test = _splits(config, split_seed)
        split_dir = os.path.join(out_dir, f"split-{split_seed}")
        report = train_and_evaluate(config, train, val, test, split_dir, index.class_names)
        write_report(report, split_dir)
        return report

    summary = median_over_splits(run, seeds)
    write_report(summary, out_dir)
    sys.stdout.write(summary_text(summary))
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "train": cmd_train,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "protocol": cmd_protocol,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glimpse-iqa",
        description="Attention-driven no-reference image quality assessment.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--checkpoint", help="model checkpoint to read")
    parser.add_argument("--out", help="output directory or file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--image", help="image to visualize")
    parser.add_argument(
        "--max-coords",
        type=int,
        default=None,
        help="gradcheck: coordinates sampled per parameter (default: all)",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except GlimpseIQAError as err:
        print(f"error: {err}", file=sys.stderr)
        return exit_code_for(err)

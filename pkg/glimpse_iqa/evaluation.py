"""Define correlation metrics, the evaluation report and the split protocol."""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import logging
import os
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .config import NetConfig
from .data import Sample
from .errors import ConfigError, DatasetError, DegenerateMetricError, ShapeError, SplitFailedError
from .imgproc import glimpse_center
from .net import CENTER, EpisodeTrace, ModelParams, forward_episode

_LOGGER: logging.Logger = logging.getLogger(__name__)

REPORT_FILE: str = "report.csv"
SUMMARY_FILE: str = "summary.txt"
CONFUSION_FILE: str = "confusion.csv"
PREDICTIONS_FILE: str = "predictions.csv"


def _paired(pred, truth) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(pred, dtype=float).reshape(-1)
    y = np.asarray(truth, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"Correlation needs equal lengths, got {x.size} and {y.size}")
    if x.size < 2:
        raise ShapeError(f"Correlation needs at least 2 values, got {x.size}")
    return x, y


def lcc(pred, truth) -> float:
    """Return the Pearson linear correlation coefficient."""
    x, y = _paired(pred, truth)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateMetricError("Correlation is undefined for a constant vector")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def srocc(pred, truth) -> float:
    """Return the Spearman rank-order correlation; ties share their average rank."""
    x, y = _paired(pred, truth)
    return lcc(stats.rankdata(x, method="average"), stats.rankdata(y, method="average"))


def _maybe(metric: Callable[[Sequence[float], Sequence[float]], float], pred, truth):
    try:
        return metric(pred, truth)
    except DegenerateMetricError:
        return None


@dataclass(frozen=True)
class Prediction:
    """The model's output for one test image."""

    path: str
    mos: float
    score: float
    true_type: int
    predicted_type: int
    final_center: Tuple[int, int]


@dataclass
class MetricReport:
    """
    Correlations, per-type breakdown and confusion counts over one split.

    srocc and lcc are None when undefined (constant predictions or truths); the
    affected names are listed in `degenerate`.
    """

    srocc: Optional[float]
    lcc: Optional[float]
    accuracy: float
    confusion: np.ndarray
    class_names: Tuple[str, ...] = ()
    per_type_srocc: Dict[str, Optional[float]] = field(default_factory=dict)
    per_type_lcc: Dict[str, Optional[float]] = field(default_factory=dict)
    predictions: List[Prediction] = field(default_factory=list)
    degenerate: Tuple[str, ...] = ()
    splits: Tuple["MetricReport", ...] = ()

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def scalars(self) -> Dict[str, Optional[float]]:
        """Return every scalar metric by name, per-type entries included."""
        values: Dict[str, Optional[float]] = {
            "srocc": self.srocc,
            "lcc": self.lcc,
            "accuracy": self.accuracy,
        }
        for name, value in self.per_type_srocc.items():
            values[f"srocc.{name}"] = value
        for name, value in self.per_type_lcc.items():
            values[f"lcc.{name}"] = value
        return values


def _class_name(class_names: Sequence[str], index: int) -> str:
    return class_names[index] if index < len(class_names) else f"type{index}"


def build_report(
    predictions: Sequence[Prediction], n_classes: int, class_names: Sequence[str] = ()
) -> MetricReport:
    """Assemble a MetricReport from per-image predictions."""
    if not predictions:
        raise DatasetError("Cannot report on an empty split")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p in predictions:
        confusion[p.true_type, p.predicted_type] += 1
    scores = np.array([p.score for p in predictions])
    truths = np.array([p.mos for p in predictions])
    degenerate: List[str] = []
    overall = {}
    for name, metric in (("srocc", srocc), ("lcc", lcc)):
        overall[name] = _maybe(metric, scores, truths) if len(predictions) > 1 else None
        if overall[name] is None:
            degenerate.append(name)
    per_type_srocc: Dict[str, Optional[float]] = {}
    per_type_lcc: Dict[str, Optional[float]] = {}
    types = np.array([p.true_type for p in predictions])
    for index in sorted(set(types.tolist())):
        mask = types == index
        name = _class_name(class_names, index)
        if mask.sum() < 2:
            per_type_srocc[name] = per_type_lcc[name] = None
            continue
        per_type_srocc[name] = _maybe(srocc, scores[mask], truths[mask])
        per_type_lcc[name] = _maybe(lcc, scores[mask], truths[mask])
    for name in degenerate:
        _LOGGER.warning("%s is undefined on this split (constant predictions or scores)", name)
    return MetricReport(
        overall["srocc"],
        overall["lcc"],
        float(np.trace(confusion)) / len(predictions),
        confusion,
        tuple(class_names),
        per_type_srocc,
        per_type_lcc,
        list(predictions),
        tuple(degenerate),
    )


def predict(params: ModelParams, sample: Sample, config: NetConfig) -> EpisodeTrace:
    """Run the deterministic episode: start at the centre, then follow μ."""
    if sample.image is None:
        raise DatasetError(f"Sample {sample.path} has not been prepared")
    return forward_episode(params, sample.image, CENTER, config, None, record=False)


def evaluate(
    params: ModelParams,
    samples: Sequence[Sample],
    config: NetConfig,
    *,
    threads: int = 1,
    class_names: Sequence[str] = (),
) -> MetricReport:
    """Evaluate prepared samples with deterministic episodes."""
    if not samples:
        raise DatasetError("Cannot evaluate an empty split")

    def one(sample: Sample) -> Prediction:
        trace = predict(params, sample, config)
        return Prediction(
            sample.path,
            sample.mos,
            trace.predicted_score,
            sample.distortion_type,
            trace.predicted_class,
            trace.steps[-1].center,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        predictions = list(executor.map(one, samples))
    return build_report(predictions, config.n_classes, class_names)


def _median(values: Sequence[Optional[float]]) -> Optional[float]:
    if any(value is None for value in values):
        return None
    return float(np.median(values))


def median_over_splits(
    run: Callable[[int], MetricReport], seeds: Sequence[int]
) -> MetricReport:
    """
    Run train+evaluate once per split seed and report the median of each scalar.

    Any failing split fails the protocol. A metric undefined on some split is
    undefined in the summary. Confusion counts are summed over splits.
    """
    seeds = list(seeds)
    if not seeds or len(seeds) % 2 == 0:
        raise ConfigError(f"The split protocol needs an odd number of seeds, got {len(seeds)}")
    reports: List[MetricReport] = []
    for seed in seeds:
        _LOGGER.info("Split seed %d (%d of %d)", seed, len(reports) + 1, len(seeds))
        try:
            reports.append(run(seed))
        except Exception as err:  # pylint: disable=broad-except
            raise SplitFailedError(f"Split with seed {seed} failed: {err}") from err
    first = reports[0]
    per_type_srocc = {
        name: _median([r.per_type_srocc.get(name) for r in reports]) for name in first.per_type_srocc
    }
    per_type_lcc = {
        name: _median([r.per_type_lcc.get(name) for r in reports]) for name in first.per_type_lcc
    }
    summary = MetricReport(
        _median([r.srocc for r in reports]),
        _median([r.lcc for r in reports]),
        float(np.median([r.accuracy for r in reports])),
        np.sum([r.confusion for r in reports], axis=0),
        first.class_names,
        per_type_srocc,
        per_type_lcc,
        [],
        tuple(name for name in ("srocc", "lcc") if any(name in r.degenerate for r in reports)),
        tuple(reports),
    )
    return summary


def _cell(value: Optional[float]) -> str:
    return "undefined" if value is None else repr(float(value))


def summary_text(report: MetricReport) -> str:
    """Return a human-readable summary of a report."""
    lines = [
        f"samples:  {report.n_samples}",
        f"SROCC:    {_cell(report.srocc)}",
        f"LCC:      {_cell(report.lcc)}",
        f"accuracy: {report.accuracy:.4f}",
    ]
    if report.splits:
        lines.append(f"splits:   {len(report.splits)} (median)")
    if report.per_type_srocc:
        lines.append("")
        lines.append(f"{'type':<32} {'SROCC':>10} {'LCC':>10}")
        for name, value in report.per_type_srocc.items():
            other = report.per_type_lcc.get(name)
            lines.append(
                f"{name:<32} {_short(value):>10} {_short(other):>10}"
            )
    return "\n".join(lines) + "\n"


def _short(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def write_report(report: MetricReport, out_dir: str) -> None:
    """Write report.csv, summary.txt, confusion.csv and predictions.csv."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, REPORT_FILE), "w", newline="", encoding="utf-8") as fptr:
        writer = csv.writer(fptr, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in report.scalars().items():
            writer.writerow([name, _cell(value)])
    with open(os.path.join(out_dir, SUMMARY_FILE), "w", encoding="utf-8") as fptr:
        fptr.write(summary_text(report))
    names = [_class_name(report.class_names, i) for i in range(report.confusion.shape[0])]
    with open(os.path.join(out_dir, CONFUSION_FILE), "w", newline="", encoding="utf-8") as fptr:
        writer = csv.writer(fptr, lineterminator="\n")
        writer.writerow(["true\\predicted"] + names)
        for name, row in zip(names, report.confusion):
            writer.writerow([name] + [int(count) for count in row])
    with open(os.path.join(out_dir, PREDICTIONS_FILE), "w", newline="", encoding="utf-8") as fptr:
        writer = csv.writer(fptr, lineterminator="\n")
        writer.writerow(["path", "mos", "predicted_score", "type", "predicted_type"])
        for p in report.predictions:
            writer.writerow([p.path, repr(p.mos), repr(p.score), p.true_type, p.predicted_type])
    _LOGGER.info("Wrote report to %s", out_dir)


@dataclass(frozen=True)
class InformativenessResult:
    """Distances from final fixations to the nearest corrupted block."""

    model_distance: float
    random_distance: float
    p_value: float
    n_images: int

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def nearest_block_distance(center: Tuple[float, float], blocks) -> float:
    """Return the pixel distance from a point to the closest block centre."""
    points = np.array([(row, col) for row, col, _ in blocks], dtype=float)
    return float(np.min(np.hypot(points[:, 0] - center[0], points[:, 1] - center[1])))


def fixation_informativeness(
    params: ModelParams,
    samples: Sequence[Sample],
    config: NetConfig,
    *,
    seed: int = 0,
    n_permutations: int = 10000,
    threads: int = 1,
) -> InformativenessResult:
    """
    Test whether final fixations land closer to corrupted blocks than random ones.

    Each image pairs the model's final fixation with one uniform-random fixation;
    the one-sided p-value comes from randomly flipping the signs of the paired
    differences.
    """
    blocky = [s for s in samples if s.blocks]
    if not blocky:
        raise DatasetError("No samples with known corrupted blocks")
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(blocky)]))
    random_locations = rng.uniform(-1.0, 1.0, size=(len(blocky), 2))

    def model_distance(sample: Sample) -> float:
        center = predict(params, sample, config).steps[-1].center
        return nearest_block_distance(center, sample.blocks)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        model = np.array(list(executor.map(model_distance, blocky)))
    chance = np.array(
        [
            nearest_block_distance(glimpse_center(l, *s.image.shape), s.blocks)
            for s, l in zip(blocky, random_locations)
        ]
    )
    diffs = chance - model
    observed = diffs.mean()
    signs = rng.choice((-1.0, 1.0), size=(n_permutations, diffs.size))
    null = (signs * diffs).mean(axis=1)
    p_value = (1.0 + np.sum(null >= observed)) / (1.0 + n_permutations)
    result = InformativenessResult(float(model.mean()), float(chance.mean()), float(p_value), len(blocky))
    _LOGGER.info(
        "Fixation distance: model %.2f px, random %.2f px, p=%.4f over %d images",
        result.model_distance,
        result.random_distance,
        result.p_value,
        result.n_images,
    )
    return result

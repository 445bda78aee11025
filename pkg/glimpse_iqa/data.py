"""Define dataset ingestion, synthetic distortions and reference-disjoint splits."""
import csv
from dataclasses import dataclass, field, replace
import logging
import math
import os
import re
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import DataConfig
from .errors import DatasetError
from .imgproc import GrayImage, local_contrast_normalize, to_grayscale
from .types import (
    MAX_LEVEL,
    TID2008_EXCLUDED_REFERENCES,
    TID2008_EXCLUDED_TYPES,
    TID2008_TYPES,
    DistortionKind,
)

_LOGGER: logging.Logger = logging.getLogger(__name__)

MOS_FILE: str = "mos_with_names.txt"
CLASSES_FILE: str = "classes.txt"
INDEX_FILE: str = "index.csv"
IMAGE_DIR: str = "distorted_images"
FILENAME_PATTERN = re.compile(r"^i(\d+)_(\d+)_(\d+)\.[a-z0-9]+$", re.IGNORECASE)

Block = Tuple[int, int, int]


@dataclass(frozen=True)
class Sample:
    """One distorted image with its opinion score and distortion label."""

    path: str
    mos: float
    distortion_type: int
    level: int
    reference_id: int
    image: Optional[GrayImage] = field(default=None, compare=False, repr=False)
    # (row centre, col centre, side) of locally corrupted blocks, if known
    blocks: Tuple[Block, ...] = field(default=(), compare=False)

    def load_image(self) -> GrayImage:
        """Return the in-memory image, reading the file if needed."""
        if self.image is not None:
            return self.image
        return load_image(self.path)


@dataclass
class DatasetIndex:
    """Samples plus the class-name and reference tables they point into."""

    samples: List[Sample]
    class_names: Tuple[str, ...]
    references: Dict[int, str]

    def __post_init__(self) -> None:
        for sample in self.samples:
            if sample.reference_id not in self.references:
                raise DatasetError(f"{sample.path}: unknown reference {sample.reference_id}")
            if not 0 <= sample.distortion_type < len(self.class_names):
                raise DatasetError(f"{sample.path}: class {sample.distortion_type} out of range")
            if not math.isfinite(sample.mos):
                raise DatasetError(f"{sample.path}: non-finite MOS")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def reference_ids(self) -> List[int]:
        return sorted({sample.reference_id for sample in self.samples})

    def subset(self, reference_ids) -> "DatasetIndex":
        """Return the samples of the given references, in index order."""
        keep = set(reference_ids)
        return DatasetIndex(
            [s for s in self.samples if s.reference_id in keep],
            self.class_names,
            {ref: name for ref, name in self.references.items() if ref in keep},
        )


def load_image(path: str) -> GrayImage:
    """Read an 8-bit grayscale or RGB image file as luminance in [0, 1]."""
    try:
        with Image.open(path) as img:
            mode = "L" if img.mode in ("L", "1", "P;L") else "RGB"
            array = np.asarray(img.convert(mode))
    except (OSError, ValueError) as err:
        raise DatasetError(f"Cannot read image {path}: {err}") from None
    return to_grayscale(array)


def save_image(img: GrayImage, path: str) -> None:
    """Write a [0, 1] grayscale image as an 8-bit PNG."""
    array = np.clip(np.rint(img.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(array, mode="L").save(path)


def _parse_listing(path: str) -> List[Tuple[int, float, str]]:
    entries = []
    with open(path, encoding="utf-8") as fptr:
        for number, line in enumerate(fptr, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise DatasetError(f"{path}:{number}: expected 'score filename', got {text!r}")
            try:
                score = float(parts[0])
            except ValueError:
                raise DatasetError(f"{path}:{number}: bad score {parts[0]!r}") from None
            if not math.isfinite(score):
                raise DatasetError(f"{path}:{number}: non-finite score")
            if not FILENAME_PATTERN.match(parts[1]):
                raise DatasetError(f"{path}:{number}: file name {parts[1]!r} is not iRR_TT_L")
            entries.append((number, score, parts[1]))
    return entries


def load_listing(
    root_dir: str,
    *,
    class_names: Optional[Sequence[str]] = None,
    types: Sequence[int] = (),
    excluded_types: Sequence[int] = (),
    excluded_references: Sequence[int] = (),
) -> DatasetIndex:
    """
    Index a directory holding a MOS listing and iRR_TT_L image files.

    Type ids are 1-based in file names; kept types are renumbered 0..K−1 in order.
    """
    mos_path = os.path.join(root_dir, MOS_FILE)
    if not os.path.isfile(mos_path):
        raise DatasetError(f"No {MOS_FILE} in {root_dir}")
    image_dir = os.path.join(root_dir, IMAGE_DIR)
    if not os.path.isdir(image_dir):
        image_dir = root_dir
    if class_names is None:
        class_names = _read_class_names(root_dir)

    rows = []
    for number, score, filename in _parse_listing(mos_path):
        ref, kind, level = (int(part) for part in FILENAME_PATTERN.match(filename).groups())
        if kind in excluded_types or ref in excluded_references:
            continue
        if types and kind not in types:
            continue
        if not 1 <= kind <= len(class_names):
            raise DatasetError(f"{mos_path}:{number}: distortion type {kind} has no name")
        path = _find_file(image_dir, filename)
        if path is None:
            raise DatasetError(f"{mos_path}:{number}: image {filename} not found")
        rows.append((ref, kind, level, score, path))
    if not rows:
        raise DatasetError(f"{mos_path} lists no usable images")

    kept_types = sorted({kind for _, kind, _, _, _ in rows})
    renumber = {kind: index for index, kind in enumerate(kept_types)}
    samples = sorted(
        (Sample(path, score, renumber[kind], level, ref) for ref, kind, level, score, path in rows),
        key=lambda s: (s.reference_id, s.distortion_type, s.level, s.path),
    )
    references = {ref: f"i{ref:02d}" for ref in sorted({s.reference_id for s in samples})}
    names = tuple(class_names[kind - 1] for kind in kept_types)
    _LOGGER.info(
        "Loaded %d samples, %d references, %d classes from %s",
        len(samples), len(references), len(names), root_dir,
    )
    return DatasetIndex(samples, names, references)


def load_tid2008(root_dir: str, types: Sequence[int] = ()) -> DatasetIndex:
    """Index a TID2008 tree, leaving out mean shift, contrast change and reference 25."""
    return load_listing(
        root_dir,
        class_names=TID2008_TYPES,
        types=types,
        excluded_types=TID2008_EXCLUDED_TYPES,
        excluded_references=TID2008_EXCLUDED_REFERENCES,
    )


def _read_class_names(root_dir: str) -> Tuple[str, ...]:
    path = os.path.join(root_dir, CLASSES_FILE)
    if not os.path.isfile(path):
        return TID2008_TYPES
    with open(path, encoding="utf-8") as fptr:
        return tuple(line.strip() for line in fptr if line.strip())


def _find_file(directory: str, filename: str) -> Optional[str]:
    path = os.path.join(directory, filename)
    if os.path.isfile(path):
        return path
    lowered = filename.lower()
    for candidate in os.listdir(directory):
        if candidate.lower() == lowered:
            return os.path.join(directory, candidate)
    return None


def export_index(index: DatasetIndex, path: str) -> None:
    """Write the index as CSV: path,mos,type,level,reference_id."""
    with open(path, "w", newline="", encoding="utf-8") as fptr:
        writer = csv.writer(fptr)
        writer.writerow(["path", "mos", "type", "level", "reference_id"])
        for s in index:
            writer.writerow([s.path, repr(s.mos), s.distortion_type, s.level, s.reference_id])


@dataclass(frozen=True)
class DistortionSpec:
    """Which distortion to apply, how hard, and with which random stream."""

    kind: DistortionKind
    level: int
    seed: int = 0


@dataclass(frozen=True)
class Distortion:
    """A synthesised image with its score, class and corrupted blocks."""

    image: GrayImage
    mos: float
    distortion_type: int
    blocks: Tuple[Block, ...] = ()

    def __iter__(self):
        return iter((self.image, self.mos, self.distortion_type))


def generate_reference(size: int, rng: np.random.Generator, variant: int) -> GrayImage:
    """Return a procedural texture: checkerboard, gradient, filtered noise or gratings."""
    rows, cols = np.mgrid[0:size, 0:size] / float(size)
    angle = rng.uniform(0, np.pi)
    gradient = 0.5 + 0.5 * (np.cos(angle) * (rows - 0.5) + np.sin(angle) * (cols - 0.5))
    kind = variant % 4
    if kind == 0:
        period = int(rng.integers(6, 20))
        r, c = np.mgrid[0:size, 0:size]
        texture = ((r // period + c // period) % 2).astype(float)
    elif kind == 1:
        noise = rng.standard_normal((size, size))
        texture = ndimage.gaussian_filter(noise, sigma=rng.uniform(1.5, 4.0))
        texture = (texture - texture.min()) / (np.ptp(texture) + 1e-12)
    elif kind == 2:
        freq = rng.uniform(4.0, 12.0)
        theta = rng.uniform(0, np.pi)
        texture = 0.5 + 0.5 * np.sin(
            2 * np.pi * freq * (np.cos(theta) * rows + np.sin(theta) * cols)
        )
    else:
        texture = np.zeros((size, size))
        for _ in range(int(rng.integers(4, 9))):
            cy, cx = rng.uniform(0, 1, size=2)
            radius = rng.uniform(0.05, 0.2)
            texture += np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * radius ** 2))
        texture = np.clip(texture, 0.0, 1.0)
    mix = rng.uniform(0.4, 0.7)
    return GrayImage(np.clip(0.15 + 0.7 * (mix * texture + (1 - mix) * gradient), 0.0, 1.0))


def _block_layout(size: int, rng: np.random.Generator) -> List[Tuple[int, int, int, float]]:
    side = max(4, size // 8)
    layout = []
    for _ in range(MAX_LEVEL):
        top = int(rng.integers(0, size - side + 1))
        left = int(rng.integers(0, size - side + 1))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        layout.append((top, left, side, sign))
    return layout


def synth_distort(
    reference: GrayImage, spec: DistortionSpec, min_size: int = 8
) -> Distortion:
    """Apply a synthetic distortion deterministically; level 0 is a no-op."""
    kind = DistortionKind.lookup(spec.kind)
    if min(reference.shape) < max(min_size, 8):
        raise DatasetError(f"Reference {reference.shape} is smaller than {max(min_size, 8)} pixels")
    if spec.level == 0:
        return Distortion(reference, kind.mos(0), kind.class_index)
    if not 0 <= spec.level <= MAX_LEVEL:
        raise DatasetError(f"Distortion level {spec.level} outside 0..{MAX_LEVEL}")
    severity = kind.severity(spec.level)
    rng = np.random.default_rng(spec.seed)
    values = reference.values
    blocks: Tuple[Block, ...] = ()
    if kind is DistortionKind.ADDITIVE_GAUSSIAN:
        out = values + severity * rng.standard_normal(values.shape)
    elif kind is DistortionKind.HIGH_FREQUENCY_NOISE:
        noise = rng.standard_normal(values.shape)
        out = values + severity * (noise - ndimage.gaussian_filter(noise, sigma=1.0))
    elif kind is DistortionKind.GAUSSIAN_BLUR:
        out = ndimage.gaussian_filter(values, sigma=severity, mode="reflect")
    else:
        # the same layout for every level: level n corrupts the first n blocks
        out = values.copy()
        placed = []
        for top, left, side, sign in _block_layout(min(values.shape), rng)[: spec.level]:
            region = out[top : top + side, left : left + side]
            out[top : top + side, left : left + side] = region + sign * severity
            placed.append((top + side // 2, left + side // 2, side))
        blocks = tuple(placed)
    return Distortion(
        GrayImage(np.clip(out, 0.0, 1.0)), kind.mos(spec.level), kind.class_index, blocks
    )


def synthetic_index(config: DataConfig, seed: int) -> DatasetIndex:
    """Build an in-memory dataset: every reference × kind × level."""
    kinds = [DistortionKind.lookup(name) for name in config.kinds]
    samples = []
    references = {}
    for ref in range(1, config.n_references + 1):
        reference = generate_reference(
            config.image_size,
            np.random.default_rng(np.random.SeedSequence([seed, ref])),
            ref - 1,
        )
        references[ref] = f"i{ref:02d}"
        for label, kind in enumerate(kinds):
            stream = int(np.random.SeedSequence([seed, ref, kind.class_index]).generate_state(1)[0])
            for level in range(1, config.levels + 1):
                result = synth_distort(reference, DistortionSpec(kind, level, stream))
                samples.append(
                    Sample(
                        f"i{ref:02d}_{label + 1:02d}_{level}.png",
                        result.mos,
                        label,
                        level,
                        ref,
                        image=result.image,
                        blocks=result.blocks,
                    )
                )
    _LOGGER.info("Synthesised %d samples from %d references", len(samples), len(references))
    return DatasetIndex(samples, tuple(kind.value for kind in kinds), references)


def write_dataset(index: DatasetIndex, out_dir: str) -> None:
    """Write in-memory samples in the listing layout (PNG files, MOS listing, index CSV)."""
    image_dir = os.path.join(out_dir, IMAGE_DIR)
    os.makedirs(image_dir, exist_ok=True)
    written = []
    with open(os.path.join(out_dir, MOS_FILE), "w", encoding="utf-8") as fptr:
        for sample in index:
            filename = os.path.basename(sample.path)
            path = os.path.join(image_dir, filename)
            save_image(sample.load_image(), path)
            fptr.write(f"{sample.mos!r} {filename}\n")
            written.append(replace(sample, path=path, image=None))
    with open(os.path.join(out_dir, CLASSES_FILE), "w", encoding="utf-8") as fptr:
        fptr.write("".join(f"{name}\n" for name in index.class_names))
    export_index(DatasetIndex(written, index.class_names, index.references), os.path.join(out_dir, INDEX_FILE))
    _LOGGER.info("Wrote %d images to %s", len(written), out_dir)


def load_dataset(config: DataConfig, seed: int) -> DatasetIndex:
    """Return the dataset a configuration points at."""
    if config.source == "synthetic":
        return synthetic_index(config, seed)
    if not os.path.isdir(config.root):
        raise DatasetError(f"Dataset directory {config.root!r} does not exist")
    if config.source == "tid2008":
        return load_tid2008(config.root, config.types)
    return load_listing(config.root, types=config.types)


def prepare(samples: Sequence[Sample], config: DataConfig) -> List[Sample]:
    """Return the samples with contrast-normalised images held in memory."""
    return [
        replace(
            sample,
            image=local_contrast_normalize(sample.load_image(), config.lcn_window, config.lcn_eps),
        )
        for sample in samples
    ]


def split_by_reference(
    index: DatasetIndex,
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> Tuple[DatasetIndex, DatasetIndex, DatasetIndex]:
    """Partition by reference image: floor(r₀N) train, floor(r₁N) val, the rest test."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"Split ratios must be three fractions summing to 1, got {ratios}")
    refs = index.reference_ids
    n = len(refs)
    if n < 3:
        raise DatasetError(f"Need at least 3 references to split, found {n}")
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise DatasetError(f"Ratios {ratios} leave an empty split for {n} references")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [refs[i] for i in order]
    parts = (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )
    _LOGGER.info("Split %d references into %d/%d/%d", n, *(len(p) for p in parts))
    return tuple(index.subset(part) for part in parts)

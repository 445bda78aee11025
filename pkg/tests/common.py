"""Define common test utilities."""
import os

import numpy as np

from glimpse_iqa.imgproc import GrayImage
from glimpse_iqa.net import EpisodeTrace

TEST_SEED = 7
TEST_IMAGE_SIZE = 48
TEST_MOS_LISTING = "mos_with_names.txt"
TEST_SMOKE_CONFIG = "smoke.ini"
TEST_TOY_CHECKPOINT = "toy.ckpt"
TEST_TOY_REPORT = "toy_report.csv"
TEST_TOY_CONFUSION = "toy_confusion.csv"
TEST_TOY_SUMMARY = "toy_summary.txt"


def fixture_path(filename):
    """Return the path of a fixture."""
    return os.path.join(os.path.dirname(__file__), "fixtures", filename)


def load_fixture(filename):
    """Load a fixture."""
    with open(fixture_path(filename), encoding="utf-8") as fptr:
        return fptr.read()


def random_image(rng, height=TEST_IMAGE_SIZE, width=TEST_IMAGE_SIZE):
    """Return a gray image of uniform noise."""
    return GrayImage(rng.uniform(0.0, 1.0, size=(height, width)))


def fake_trace(logits, score):
    """Return an episode trace carrying only the given output tensors."""
    return EpisodeTrace([], logits, None, score, logits.tape)


def brute_average_ranks(values):
    """Rank values 1..n, giving tied values the mean of their positions."""
    values = list(values)
    ranks = []
    for value in values:
        below = sum(1 for other in values if other < value)
        equal = sum(1 for other in values if other == value)
        ranks.append(below + (equal + 1) / 2.0)
    return np.array(ranks)

"""Define finite-difference oracles for checking analytic gradients."""
from dataclasses import dataclass
import logging
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from .tensor import DTYPE, Tensor

_LOGGER: logging.Logger = logging.getLogger(__name__)

DEFAULT_STEP: float = 1e-5


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x, step: float = DEFAULT_STEP
) -> np.ndarray:
    """Return the central-difference gradient of a scalar function at x."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        f_plus = float(f(base.copy()))
        flat[i] = keep - step
        f_minus = float(f(base.copy()))
        flat[i] = keep
        out[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Return max |a − n| / max(|a|, |n|, floor) over all elements."""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


@dataclass(frozen=True)
class GradCheckEntry:
    """The worst relative error found for one named parameter."""

    name: str
    max_rel_error: float
    checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def check_named_gradients(
    loss_fn: Callable[[Dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    *,
    step: float = DEFAULT_STEP,
    max_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-7,
) -> List[GradCheckEntry]:
    """
    Compare analytic gradients of every named array against central differences.

    At most `max_coords` seeded coordinates are perturbed per array; None checks all.
    """
    rng = np.random.default_rng(seed)
    entries: List[GradCheckEntry] = []
    for name, value in params.items():
        size = value.size
        if max_coords is None or size <= max_coords:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        worst = 0.0
        for index in coords:
            shifted = {key: np.array(array, dtype=DTYPE) for key, array in params.items()}
            flat = shifted[name].reshape(-1)
            keep = flat[index]
            flat[index] = keep + step
            f_plus = loss_fn(shifted)
            flat[index] = keep - step
            f_minus = loss_fn(shifted)
            numeric = (f_plus - f_minus) / (2.0 * step)
            expected = analytic[name].reshape(-1)[index]
            worst = max(worst, relative_error(expected, numeric, floor))
        _LOGGER.debug("Gradient check %s: %d coords, max rel err %.3e", name, len(coords), worst)
        entries.append(GradCheckEntry(name, worst, len(coords)))
    return entries

"""Under-sampling patterns for Cartesian k-space.

1D patterns select whole phase-encode lines (columns); 2D patterns select
individual k-space points. Every pattern forces a fully sampled calibration
region around DC: a ``calib x calib`` block for 2D patterns and ``calib``
center lines for 1D patterns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kspace import center_index
from .rng import substream


class Pattern(str, Enum):
    POISSON = "poisson"
    RANDOM2D = "random2d"
    UNIFORM1D = "uniform1d"
    EQUISPACED1D = "equispaced1d"
    CARTESIAN1D = "cartesian1d"

    @property
    def is_2d(self) -> bool:
        return self in (Pattern.POISSON, Pattern.RANDOM2D)


class InfeasibleMask(ValueError):
    pass


@dataclass(frozen=True)
class SamplingMask:
    omega: np.ndarray
    pattern: Pattern
    accel: float
    calib: int
    seed: int

    @property
    def fraction(self) -> float:
        return float(self.omega.mean())

    @property
    def shape(self) -> tuple[int, int]:
        return self.omega.shape

    def meta(self) -> dict:
        return {"kind": "mask", "pattern": self.pattern.value, "accel": self.accel, "calib": self.calib,
                "seed": self.seed}


def _calib_slice(n: int, c: int, size: int) -> slice:
    start = c - size // 2
    return slice(start, start + size)


def calibration_region(shape: tuple[int, int], calib: int, two_d: bool = True) -> np.ndarray:
    h, w = shape
    ch, cw = center_index(shape)
    region = np.zeros(shape, dtype=bool)
    if calib <= 0:
        return region
    if two_d:
        region[_calib_slice(h, ch, calib), _calib_slice(w, cw, calib)] = True
    else:
        region[:, _calib_slice(w, cw, calib)] = True
    return region


def _random2d(shape, budget: int, calib_mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    free = ~calib_mask
    p = (budget - calib_mask.sum()) / free.sum()
    omega = calib_mask | (free & (rng.random(shape) < p))
    return omega


def _dart_throw(shape, order: np.ndarray, radius: np.ndarray, r_max: int) -> np.ndarray:
    h, w = shape
    taken = np.zeros((h + 2 * r_max, w + 2 * r_max), dtype=bool)
    offs = np.arange(-r_max, r_max + 1)
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    for flat in order:
        i, j = divmod(int(flat), w)
        r = radius[i, j]
        win = taken[i:i + 2 * r_max + 1, j:j + 2 * r_max + 1]
        if not np.any(win & (d2 < r * r)):
            taken[i + r_max, j + r_max] = True
    return taken[r_max:r_max + h, r_max:r_max + w]


def _poisson(shape, budget: int, calib_mask: np.ndarray, rng: np.random.Generator,
             density_slope: float = 2.0, tol: float = 0.02, iters: int = 24) -> np.ndarray:
    """Variable-density Poisson disc: exclusion radius grows linearly with distance from DC."""
    h, w = shape
    ch, cw = center_index(shape)
    rows, cols = np.indices(shape)
    dist = np.hypot((rows - ch) / (h / 2), (cols - cw) / (w / 2)) / math.sqrt(2)
    profile = 1.0 + density_slope * dist
    order = rng.permutation(h * w)
    lo, hi = 0.1, math.sqrt(h * w / max(budget, 1)) * 2.0
    best, best_err = None, math.inf
    for _ in range(iters):
        r0 = 0.5 * (lo + hi)
        radius = r0 * profile
        r_max = int(math.ceil(radius.max()))
        omega = _dart_throw(shape, order, radius, r_max) | calib_mask
        err = (omega.sum() - budget) / budget
        if abs(err) < abs(best_err):
            best, best_err = omega, err
        if abs(err) <= tol:
            break
        if err > 0:
            lo = r0
        else:
            hi = r0
    return best


def _lines(shape, budget_lines: int, calib_lines: np.ndarray, pattern: Pattern, accel: float,
           rng: np.random.Generator) -> np.ndarray:
    w = shape[1]
    cw = center_index(shape)[1]
    chosen = calib_lines.copy()
    others = np.flatnonzero(~calib_lines)
    extra = max(budget_lines - int(calib_lines.sum()), 0)
    if pattern is Pattern.EQUISPACED1D:
        step = int(math.ceil(accel))
        chosen |= (np.arange(w) - cw) % step == 0
    elif pattern is Pattern.UNIFORM1D:
        if extra:
            pick = np.round(np.linspace(0, len(others) - 1, extra)).astype(int)
            chosen[others[pick]] = True
    elif pattern is Pattern.CARTESIAN1D:
        if extra:
            chosen[rng.choice(others, size=extra, replace=False)] = True
    return chosen


def make_mask(pattern: Pattern | str, shape: tuple[int, int], accel: float, calib: int = 8,
              seed: int = 0) -> SamplingMask:
    """Sampling pattern with roughly ``1/accel`` of k-space acquired.

    ``Equispaced1D`` takes every ``ceil(accel)``-th line on top of the
    calibration lines without compensating for them, so its fraction runs
    above ``1/accel``; the other patterns hit the budget including the
    calibration region.
    """
    pattern = Pattern(pattern)
    h, w = shape
    if accel < 1:
        raise ValueError("acceleration factor must be >= 1")
    if calib < 0 or calib > min(h, w):
        raise ValueError(f"calibration size {calib} does not fit in {shape}")
    if accel == 1:
        return SamplingMask(np.ones(shape, dtype=bool), pattern, float(accel), calib, seed)
    rng = substream(seed, "mask", {p: i for i, p in enumerate(Pattern)}[pattern])
    if pattern.is_2d:
        budget = int(round(h * w / accel))
        calib_mask = calibration_region(shape, calib, two_d=True)
        if calib_mask.sum() > budget:
            raise InfeasibleMask(f"calibration block {calib}x{calib} exceeds the 1/{accel} sampling budget")
        if pattern is Pattern.RANDOM2D:
            omega = _random2d(shape, budget, calib_mask, rng)
        else:
            omega = _poisson(shape, budget, calib_mask, rng)
    else:
        budget_lines = int(round(w / accel))
        calib_lines = calibration_region(shape, calib, two_d=False)[0]
        if calib_lines.sum() > budget_lines:
            raise InfeasibleMask(f"{calib} calibration lines exceed the 1/{accel} line budget")
        lines = _lines(shape, budget_lines, calib_lines, pattern, accel, rng)
        omega = np.broadcast_to(lines, shape).copy()
    omega.setflags(write=False)
    return SamplingMask(omega, pattern, float(accel), int(calib), int(seed))
